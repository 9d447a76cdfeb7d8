//! Discrete-event engine and the cluster it drives.

mod cluster;
mod engine;
mod event;

pub use cluster::{
    ClusterModel, Phase, Pod, PodId, Pool, RequestId, Route, RoutingPref, ServiceModel,
};
pub use engine::{Accounting, Request, RunStats, SimConfig, Simulation, TraceRecord};
pub use event::{EventKind, EventQueue, SimClock, SimEvent};
