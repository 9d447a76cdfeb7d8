use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Cpu,
    Gpu,
}

impl Pool {
    pub fn other(self) -> Pool {
        match self {
            Pool::Cpu => Pool::Gpu,
            Pool::Gpu => Pool::Cpu,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pool::Cpu => "cpu",
            Pool::Gpu => "gpu",
        }
    }
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pod lifecycle. Transitions only move forward through this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Pending,
    Starting,
    Ready,
    Terminating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PodId(pub u32);

impl fmt::Display for PodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pod-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoutingPref {
    CpuFirst,
    GpuFirst,
}

impl RoutingPref {
    pub fn first(self) -> Pool {
        match self {
            RoutingPref::CpuFirst => Pool::Cpu,
            RoutingPref::GpuFirst => Pool::Gpu,
        }
    }
}

/// Finite-concurrency service model. A request's service time is fixed when
/// it enters service: `base_time * in_service^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceModel {
    pub base_time: f64,
    pub cpu_exponent: f64,
    pub gpu_exponent: f64,
    pub cpu_cap: usize,
    pub gpu_cap: usize,
    pub cpu_startup: f64,
    pub gpu_startup: f64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self {
            base_time: 0.0816,
            cpu_exponent: 0.9,
            gpu_exponent: 0.35,
            cpu_cap: 2,
            gpu_cap: 8,
            cpu_startup: 5.0,
            gpu_startup: 10.0,
        }
    }
}

impl ServiceModel {
    pub fn cap(&self, pool: Pool) -> usize {
        match pool {
            Pool::Cpu => self.cpu_cap,
            Pool::Gpu => self.gpu_cap,
        }
    }

    pub fn startup(&self, pool: Pool) -> f64 {
        match pool {
            Pool::Cpu => self.cpu_startup,
            Pool::Gpu => self.gpu_startup,
        }
    }

    pub fn contention_factor(&self, pool: Pool, in_service: usize) -> f64 {
        let exponent = match pool {
            Pool::Cpu => self.cpu_exponent,
            Pool::Gpu => self.gpu_exponent,
        };
        (in_service.max(1) as f64).powf(exponent)
    }

    pub fn service_time(&self, pool: Pool, in_service: usize) -> f64 {
        self.base_time * self.contention_factor(pool, in_service)
    }

    /// Completions per second of one pod kept at full concurrency.
    pub fn sustainable_rate(&self, pool: Pool) -> f64 {
        let cap = self.cap(pool);
        cap as f64 / self.service_time(pool, cap)
    }
}

#[derive(Debug, Clone)]
pub struct Pod {
    pub id: PodId,
    pub pool: Pool,
    pub phase: Phase,
    pub created_at: f64,
    pub started_at: Option<f64>,
    pub concurrency_cap: usize,
    pub queue: VecDeque<RequestId>,
    pub in_service: Vec<RequestId>,
}

impl Pod {
    pub fn is_ready(&self) -> bool {
        self.phase == Phase::Ready
    }

    pub fn has_free_slot(&self) -> bool {
        self.in_service.len() < self.concurrency_cap
    }

    pub fn busy_fraction(&self) -> f64 {
        if self.concurrency_cap == 0 {
            0.0
        } else {
            self.in_service.len() as f64 / self.concurrency_cap as f64
        }
    }

    /// Counts toward desired replicas (not on its way out).
    pub fn is_live(&self) -> bool {
        self.phase != Phase::Terminating
    }

    /// Holds a GPU device. Draining pods keep theirs until empty.
    pub fn holds_device(&self) -> bool {
        matches!(self.phase, Phase::Starting | Phase::Ready | Phase::Terminating)
    }
}

/// Where an incoming request goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Serve(PodId),
    Enqueue(PodId),
    Backlog,
}

/// Pods of both pools plus the replica targets. Event scheduling lives in
/// [`super::Simulation`]; this type only answers placement questions and
/// holds state.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pods: Vec<Pod>,
    gpu_device_budget: usize,
    desired_cpu: usize,
    desired_gpu: usize,
    pub routing_pref: RoutingPref,
    pub backlog: VecDeque<RequestId>,
    next_pod_id: u32,
    service: ServiceModel,
}

impl ClusterModel {
    pub fn new(gpu_device_budget: usize, service: ServiceModel) -> Self {
        Self {
            pods: Vec::new(),
            gpu_device_budget,
            desired_cpu: 0,
            desired_gpu: 0,
            routing_pref: RoutingPref::CpuFirst,
            backlog: VecDeque::new(),
            next_pod_id: 0,
            service,
        }
    }

    pub fn service(&self) -> &ServiceModel {
        &self.service
    }

    pub fn gpu_device_budget(&self) -> usize {
        self.gpu_device_budget
    }

    pub fn pods(&self) -> &[Pod] {
        &self.pods
    }

    pub fn pods_of(&self, pool: Pool) -> impl Iterator<Item = &Pod> {
        self.pods.iter().filter(move |p| p.pool == pool)
    }

    pub fn cpu_pods(&self) -> impl Iterator<Item = &Pod> {
        self.pods_of(Pool::Cpu)
    }

    pub fn gpu_pods(&self) -> impl Iterator<Item = &Pod> {
        self.pods_of(Pool::Gpu)
    }

    pub fn ready_pods(&self, pool: Pool) -> impl Iterator<Item = &Pod> {
        self.pods_of(pool).filter(|p| p.is_ready())
    }

    pub fn count_in_phase(&self, pool: Pool, phase: Phase) -> usize {
        self.pods_of(pool).filter(|p| p.phase == phase).count()
    }

    pub fn live_count(&self, pool: Pool) -> usize {
        self.pods_of(pool).filter(|p| p.is_live()).count()
    }

    pub fn active_gpu_count(&self) -> usize {
        self.gpu_pods()
            .filter(|p| matches!(p.phase, Phase::Starting | Phase::Ready))
            .count()
    }

    pub fn gpu_devices_in_use(&self) -> usize {
        self.gpu_pods().filter(|p| p.holds_device()).count()
    }

    pub fn desired(&self, pool: Pool) -> usize {
        match pool {
            Pool::Cpu => self.desired_cpu,
            Pool::Gpu => self.desired_gpu,
        }
    }

    pub(crate) fn set_desired(&mut self, pool: Pool, count: usize) {
        match pool {
            Pool::Cpu => self.desired_cpu = count,
            Pool::Gpu => self.desired_gpu = count,
        }
    }

    pub fn pod(&self, id: PodId) -> Option<&Pod> {
        self.pods.iter().find(|p| p.id == id)
    }

    pub(crate) fn pod_mut(&mut self, id: PodId) -> Option<&mut Pod> {
        self.pods.iter_mut().find(|p| p.id == id)
    }

    pub(crate) fn add_pod(&mut self, pool: Pool, phase: Phase, now: f64) -> PodId {
        let id = PodId(self.next_pod_id);
        self.next_pod_id += 1;
        self.pods.push(Pod {
            id,
            pool,
            phase,
            created_at: now,
            started_at: (phase != Phase::Pending).then_some(now),
            concurrency_cap: self.service.cap(pool),
            queue: VecDeque::new(),
            in_service: Vec::new(),
        });
        id
    }

    pub(crate) fn remove_pod(&mut self, id: PodId) -> Option<Pod> {
        let idx = self.pods.iter().position(|p| p.id == id)?;
        Some(self.pods.remove(idx))
    }

    /// Adds `n` pods that are already serving at t=0, respecting the GPU
    /// device budget (surplus GPU pods start out Pending). Raises the desired
    /// count accordingly.
    pub fn warm_start(&mut self, pool: Pool, n: usize) {
        for _ in 0..n {
            let phase = if pool == Pool::Gpu && self.gpu_devices_in_use() >= self.gpu_device_budget {
                Phase::Pending
            } else {
                Phase::Ready
            };
            self.add_pod(pool, phase, 0.0);
        }
        let cur = self.desired(pool);
        self.set_desired(pool, cur + n);
    }

    /// Picks a pod for a new request. Free slot in the preferred pool, then in
    /// the other pool (least in-service, then lowest id), then the shortest
    /// queue among Ready pods (lowest id on ties), else the cluster backlog.
    pub fn select_route(&self) -> Route {
        let first = self.routing_pref.first();
        for pool in [first, first.other()] {
            let free = self
                .ready_pods(pool)
                .filter(|p| p.has_free_slot())
                .min_by_key(|p| (p.in_service.len(), p.id));
            if let Some(p) = free {
                return Route::Serve(p.id);
            }
        }
        self.pods
            .iter()
            .filter(|p| p.is_ready())
            .min_by_key(|p| (p.queue.len(), p.id))
            .map_or(Route::Backlog, |p| Route::Enqueue(p.id))
    }

    /// Scale-down victims in removal order: Pending, then Starting, then
    /// Ready; newest first within each phase.
    pub fn scale_down_victims(&self, pool: Pool, n: usize) -> Vec<PodId> {
        let mut candidates: Vec<&Pod> = self.pods_of(pool).filter(|p| p.is_live()).collect();
        candidates.sort_by(|a, b| a.phase.cmp(&b.phase).then(b.id.cmp(&a.id)));
        candidates.into_iter().take(n).map(|p| p.id).collect()
    }

    pub fn queued_count(&self) -> usize {
        self.pods.iter().map(|p| p.queue.len()).sum()
    }

    pub fn in_service_count(&self) -> usize {
        self.pods.iter().map(|p| p.in_service.len()).sum()
    }

    #[doc(hidden)]
    pub fn fill_slots_for_test(&mut self, pool: Pool, n: usize) {
        let mut next = 1_000_000u64;
        let mut left = n;
        for pod in self.pods.iter_mut().filter(|p| p.pool == pool && p.is_ready()) {
            while left > 0 && pod.has_free_slot() {
                pod.in_service.push(RequestId(next));
                next += 1;
                left -= 1;
            }
        }
    }

    #[doc(hidden)]
    pub fn push_queue_for_test(&mut self, id: PodId, n: usize) {
        let pod = self.pod_mut(id).expect("pod exists");
        for i in 0..n {
            pod.queue.push_back(RequestId(2_000_000 + i as u64));
        }
    }
}
