use serde::{Deserialize, Serialize};

use super::cluster::{ClusterModel, Phase, PodId, Pool, RequestId, Route, ServiceModel};
use super::event::{EventKind, EventQueue, SimEvent};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsWindow, SeriesRow, Snapshot, UtilSample, UtilizationModel};
use crate::traffic::{LoadGenerator, PlannedArrival, TrafficPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub service: ServiceModel,
    pub gpu_device_budget: usize,
    /// Monitoring scrape period, seconds.
    pub scrape_interval: f64,
    pub window_len: f64,
    pub utilization: UtilizationModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            service: ServiceModel::default(),
            gpu_device_budget: 1,
            scrape_interval: 1.0,
            window_len: metrics::DEFAULT_WINDOW_LEN,
            utilization: UtilizationModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub user: Option<usize>,
    pub arrived_at: f64,
    pub service_started_at: Option<f64>,
    pub completed_at: Option<f64>,
    pub pod_id: Option<PodId>,
    pub pool: Option<Pool>,
}

impl Request {
    pub fn latency(&self) -> Option<f64> {
        self.completed_at.map(|c| c - self.arrived_at)
    }
}

/// Whole-run aggregates (not windowed).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub latencies: Vec<f64>,
    pub completed_cpu: usize,
    pub completed_gpu: usize,
    pub util_sum: (f64, f64, f64),
    pub util_samples: usize,
    pub max_active_gpu: usize,
    /// Calls to `set_desired_replicas` after construction.
    pub replica_changes: usize,
}

impl RunStats {
    pub fn completed(&self) -> usize {
        self.latencies.len()
    }

    pub fn p95(&self) -> f64 {
        metrics::p95_of(&self.latencies)
    }

    pub fn mean_latency(&self) -> f64 {
        if self.latencies.is_empty() {
            0.0
        } else {
            self.latencies.iter().sum::<f64>() / self.latencies.len() as f64
        }
    }

    /// Mean (cpu, mem, gpu) utilization over every scrape.
    pub fn mean_util(&self) -> (f64, f64, f64) {
        if self.util_samples == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.util_samples as f64;
        (self.util_sum.0 / n, self.util_sum.1 / n, self.util_sum.2 / n)
    }
}

/// Request bookkeeping at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accounting {
    pub injected: usize,
    pub completed: usize,
    pub in_service: usize,
    pub queued: usize,
    pub backlog: usize,
}

impl Accounting {
    pub fn in_flight(&self) -> usize {
        self.in_service + self.queued
    }

    pub fn balanced(&self) -> bool {
        self.injected == self.completed + self.in_flight() + self.backlog
    }
}

/// A processed event, as recorded by the optional trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub event: SimEvent,
    pub desired_cpu: usize,
    pub desired_gpu: usize,
}

/// One simulation instance: clock, cluster, closed-loop users and monitoring.
/// Single-threaded and fully determined by its config, traffic seed and the
/// sequence of external calls.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    queue: EventQueue,
    cluster: ClusterModel,
    requests: Vec<Request>,
    traffic: Option<LoadGenerator>,
    window: MetricsWindow,
    stats: RunStats,
    series: Option<Vec<SeriesRow>>,
    trace: Option<Vec<TraceRecord>>,
    ended: bool,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Self {
        let cluster = ClusterModel::new(cfg.gpu_device_budget, cfg.service.clone());
        let window = MetricsWindow::new(cfg.window_len);
        let mut sim = Self {
            cfg,
            queue: EventQueue::new(),
            cluster,
            requests: Vec::new(),
            traffic: None,
            window,
            stats: RunStats::default(),
            series: None,
            trace: None,
            ended: false,
        };
        if sim.cfg.scrape_interval > 0.0 {
            sim.schedule(0.0, EventKind::ControlTick)
                .expect("t=0 is never in the past");
        }
        sim
    }

    /// A simulation with warm pods and, optionally, closed-loop traffic.
    pub fn with_cluster(
        cfg: SimConfig,
        cpu: usize,
        gpu: usize,
        traffic: Option<TrafficPattern>,
    ) -> Self {
        let mut sim = Self::new(cfg);
        sim.cluster.warm_start(Pool::Gpu, gpu);
        sim.cluster.warm_start(Pool::Cpu, cpu);
        if let Some(pattern) = traffic {
            sim.attach_traffic(pattern);
        }
        sim
    }

    /// Starts the closed-loop users. The population follows the pattern at
    /// every scrape tick; an end-of-episode marker fires at its duration.
    pub fn attach_traffic(&mut self, pattern: TrafficPattern) {
        let duration = pattern.spec().duration;
        let mut generator = LoadGenerator::new(pattern);
        let planned = generator.retarget(self.now());
        self.traffic = Some(generator);
        for p in planned {
            self.schedule_arrival(p);
        }
        if duration >= self.now() {
            self.schedule(duration, EventKind::EpisodeEnd)
                .expect("duration not in the past");
        }
    }

    pub fn enable_series(&mut self) {
        self.series.get_or_insert_with(Vec::new);
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn cluster(&self) -> &ClusterModel {
        &self.cluster
    }

    pub fn window(&self) -> &MetricsWindow {
        &self.window
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn traffic(&self) -> Option<&LoadGenerator> {
        self.traffic.as_ref()
    }

    pub fn series(&self) -> &[SeriesRow] {
        self.series.as_deref().unwrap_or(&[])
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn episode_ended(&self) -> bool {
        self.ended
    }

    /// Current target population of the load generator.
    pub fn users(&self) -> usize {
        self.traffic.as_ref().map_or(0, |g| g.target())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::capture(
            &self.window,
            &self.cluster,
            &self.cfg.utilization,
            self.now(),
            self.users(),
        )
    }

    pub fn export_snapshot(&self) -> String {
        self.snapshot().to_exposition()
    }

    pub fn schedule(&mut self, fire_at: f64, kind: EventKind) -> Result<SimEvent> {
        self.queue.schedule(fire_at, kind)
    }

    /// Injects one request from an external (non closed-loop) client.
    pub fn inject_request(&mut self, at: f64) -> Result<SimEvent> {
        self.schedule(
            at,
            EventKind::RequestArrival {
                user: None,
                generation: 0,
            },
        )
    }

    pub fn set_routing_pref(&mut self, pref: super::RoutingPref) {
        self.cluster.routing_pref = pref;
    }

    /// Replica actuation. Scale-up adds Pending pods that start as soon as the
    /// pool allows; scale-down drains victims (in-service work finishes,
    /// queued work is re-routed).
    pub fn set_desired_replicas(&mut self, pool: Pool, count: usize) {
        let live = self.cluster.live_count(pool);
        self.cluster.set_desired(pool, count);
        if count == live {
            return;
        }
        self.stats.replica_changes += 1;
        let now = self.now();
        if count > live {
            for _ in live..count {
                self.cluster.add_pod(pool, Phase::Pending, now);
            }
            self.start_pending(pool);
        } else {
            for victim in self.cluster.scale_down_victims(pool, live - count) {
                self.terminate(victim);
            }
            self.start_pending(pool);
        }
        self.check_invariants();
    }

    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        if t_end < self.now() {
            return Err(Error::TimeReversal {
                t_end,
                now: self.now(),
            });
        }
        while let Some(ev) = self.queue.pop_until(t_end) {
            self.window.advance(ev.fire_at);
            self.handle(ev);
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRecord {
                    event: ev,
                    desired_cpu: self.cluster.desired(Pool::Cpu),
                    desired_gpu: self.cluster.desired(Pool::Gpu),
                });
            }
        }
        self.queue.advance_to(t_end);
        self.window.advance(t_end);
        Ok(())
    }

    pub fn accounting(&self) -> Accounting {
        Accounting {
            injected: self.requests.len(),
            completed: self.stats.completed(),
            in_service: self.cluster.in_service_count(),
            queued: self.cluster.queued_count(),
            backlog: self.cluster.backlog.len(),
        }
    }

    /// Every unfinished request must sit in exactly one pod slot, pod queue
    /// or the backlog; finished ones in none.
    pub fn verify_request_accounting(&self) -> std::result::Result<(), String> {
        let mut seen = vec![0u8; self.requests.len()];
        let mut mark = |id: RequestId, place: &str| -> std::result::Result<(), String> {
            let slot = seen
                .get_mut(id.0 as usize)
                .ok_or_else(|| format!("unknown request {} in {place}", id.0))?;
            *slot += 1;
            Ok(())
        };
        for pod in self.cluster.pods() {
            for &r in &pod.in_service {
                mark(r, "service")?;
            }
            for &r in &pod.queue {
                mark(r, "queue")?;
            }
        }
        for &r in &self.cluster.backlog {
            mark(r, "backlog")?;
        }
        for (req, &count) in self.requests.iter().zip(&seen) {
            let expected = u8::from(req.completed_at.is_none());
            if count != expected {
                return Err(format!(
                    "request {} located {count} times (completed: {})",
                    req.id.0,
                    req.completed_at.is_some()
                ));
            }
        }
        if !self.accounting().balanced() {
            return Err(format!("unbalanced accounting {:?}", self.accounting()));
        }
        Ok(())
    }

    fn schedule_arrival(&mut self, p: PlannedArrival) {
        self.schedule(
            p.at,
            EventKind::RequestArrival {
                user: Some(p.user),
                generation: p.generation,
            },
        )
        .expect("arrivals are planned at or after now");
    }

    fn handle(&mut self, ev: SimEvent) {
        match ev.kind {
            EventKind::RequestArrival { user, generation } => {
                if let Some(u) = user {
                    let valid = self
                        .traffic
                        .as_mut()
                        .is_some_and(|g| g.on_arrival(u, generation));
                    if !valid {
                        return;
                    }
                }
                let id = RequestId(self.requests.len() as u64);
                self.requests.push(Request {
                    id,
                    user,
                    arrived_at: self.now(),
                    service_started_at: None,
                    completed_at: None,
                    pod_id: None,
                    pool: None,
                });
                self.route(id);
            }
            EventKind::ServiceComplete { pod, request } => self.complete(pod, request),
            EventKind::PodPhaseChange { pod, phase } => {
                if phase == Phase::Ready {
                    self.pod_ready(pod);
                }
            }
            EventKind::ControlTick => self.scrape(),
            EventKind::EpisodeEnd => self.ended = true,
        }
        self.check_invariants();
    }

    fn scrape(&mut self) {
        let now = self.now();
        if let Some(generator) = self.traffic.as_mut() {
            let planned = generator.retarget(now);
            for p in planned {
                self.schedule_arrival(p);
            }
        }
        let sample: UtilSample =
            metrics::sample_utilization(now, &self.cluster, &self.cfg.utilization);
        self.stats.util_sum.0 += sample.cpu;
        self.stats.util_sum.1 += sample.mem;
        self.stats.util_sum.2 += sample.gpu;
        self.stats.util_samples += 1;
        self.window.record_util(sample);
        if self.series.is_some() {
            let row = self.snapshot().to_series_row();
            if let Some(series) = self.series.as_mut() {
                series.push(row);
            }
        }
        let next = now + self.cfg.scrape_interval;
        self.schedule(next, EventKind::ControlTick)
            .expect("next tick is in the future");
    }

    fn route(&mut self, id: RequestId) {
        match self.cluster.select_route() {
            Route::Serve(pod) => self.start_service(pod, id),
            Route::Enqueue(pod) => {
                self.cluster
                    .pod_mut(pod)
                    .expect("routed to existing pod")
                    .queue
                    .push_back(id);
            }
            Route::Backlog => self.cluster.backlog.push_back(id),
        }
    }

    fn start_service(&mut self, pod_id: PodId, id: RequestId) {
        let now = self.now();
        let pod = self.cluster.pod_mut(pod_id).expect("pod exists");
        debug_assert!(pod.has_free_slot());
        pod.in_service.push(id);
        let pool = pod.pool;
        let in_service = pod.in_service.len();
        let dt = self.cluster.service().service_time(pool, in_service);
        let req = &mut self.requests[id.0 as usize];
        req.service_started_at = Some(now);
        req.pod_id = Some(pod_id);
        req.pool = Some(pool);
        self.schedule(
            now + dt,
            EventKind::ServiceComplete {
                pod: pod_id,
                request: id,
            },
        )
        .expect("service ends in the future");
    }

    fn complete(&mut self, pod_id: PodId, id: RequestId) {
        let now = self.now();
        let (pool, next, drained) = {
            let pod = self.cluster.pod_mut(pod_id).expect("completing pod exists");
            let pos = pod
                .in_service
                .iter()
                .position(|&r| r == id)
                .expect("request in service");
            pod.in_service.swap_remove(pos);
            let next = pod.queue.pop_front();
            let drained = pod.phase == Phase::Terminating && pod.in_service.is_empty();
            (pod.pool, next, drained)
        };

        let req = &mut self.requests[id.0 as usize];
        req.completed_at = Some(now);
        let latency = now - req.arrived_at;
        let user = req.user;
        self.stats.latencies.push(latency);
        match pool {
            Pool::Cpu => self.stats.completed_cpu += 1,
            Pool::Gpu => self.stats.completed_gpu += 1,
        }
        self.window.record_completion(now, latency);

        if let Some(next) = next {
            self.start_service(pod_id, next);
        }
        if drained && self.cluster.pod(pod_id).is_some_and(|p| p.queue.is_empty()) {
            self.cluster.remove_pod(pod_id);
            self.start_pending(pool);
        }

        if let Some(u) = user {
            let planned = self.traffic.as_mut().and_then(|g| g.on_complete(u, now));
            if let Some(p) = planned {
                self.schedule_arrival(p);
            }
        }
    }

    fn pod_ready(&mut self, pod_id: PodId) {
        let Some(pod) = self.cluster.pod_mut(pod_id) else {
            return;
        };
        if pod.phase != Phase::Starting {
            return;
        }
        pod.phase = Phase::Ready;
        while let Some(id) = self.cluster.backlog.pop_front() {
            self.route(id);
        }
    }

    fn start_pending(&mut self, pool: Pool) {
        let now = self.now();
        loop {
            if pool == Pool::Gpu
                && self.cluster.gpu_devices_in_use() >= self.cluster.gpu_device_budget()
            {
                break;
            }
            let Some(pod) = self
                .cluster
                .pods_of(pool)
                .filter(|p| p.phase == Phase::Pending)
                .map(|p| p.id)
                .min()
            else {
                break;
            };
            let p = self.cluster.pod_mut(pod).expect("pending pod exists");
            p.phase = Phase::Starting;
            p.started_at = Some(now);
            let ready_at = now + self.cfg.service.startup(pool);
            self.schedule(
                ready_at,
                EventKind::PodPhaseChange {
                    pod,
                    phase: Phase::Ready,
                },
            )
            .expect("startup completes in the future");
        }
    }

    fn terminate(&mut self, pod_id: PodId) {
        let Some(pod) = self.cluster.pod_mut(pod_id) else {
            return;
        };
        if pod.phase == Phase::Pending {
            self.cluster.remove_pod(pod_id);
            return;
        }
        pod.phase = Phase::Terminating;
        let requeue: Vec<RequestId> = pod.queue.drain(..).collect();
        let idle = pod.in_service.is_empty();
        if idle {
            self.cluster.remove_pod(pod_id);
        }
        for id in requeue {
            self.route(id);
        }
    }

    fn check_invariants(&mut self) {
        let active = self.cluster.active_gpu_count();
        self.stats.max_active_gpu = self.stats.max_active_gpu.max(active);
        debug_assert!(active <= self.cluster.gpu_device_budget());
    }
}
