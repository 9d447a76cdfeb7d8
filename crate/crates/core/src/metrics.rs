//! Sliding-window statistics and the synthetic resource-usage model that
//! stand in for the Prometheus/DCGM monitoring stack.

use std::collections::VecDeque;
use std::fmt::Write as _;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::sim::{ClusterModel, Pool};

pub const DEFAULT_WINDOW_LEN: f64 = 30.0;

/// Nearest-rank percentile: the `ceil(p * n)`-th order statistic (1-based).
/// Returns zero for an empty sample set.
pub fn percentile_nearest_rank<T: Float>(samples: &[T], p: f64) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("latency samples are finite"));
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn p95_of<T: Float>(samples: &[T]) -> T {
    percentile_nearest_rank(samples, 0.95)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub t: f64,
    pub cpu: f64,
    pub mem: f64,
    pub gpu: f64,
    /// Mean busy fraction of Ready CPU-pool pods (the HPA's input).
    pub cpu_pool_busy: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsWindow {
    window_len: f64,
    now: f64,
    latencies: VecDeque<(f64, f64)>,
    completions: VecDeque<f64>,
    util_samples: VecDeque<UtilSample>,
}

impl Default for MetricsWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_LEN)
    }
}

impl MetricsWindow {
    pub fn new(window_len: f64) -> Self {
        Self {
            window_len,
            now: 0.0,
            latencies: VecDeque::new(),
            completions: VecDeque::new(),
            util_samples: VecDeque::new(),
        }
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    /// Moves the window's right edge to `now` and evicts expired samples.
    pub fn advance(&mut self, now: f64) {
        debug_assert!(now >= self.now);
        self.now = now;
        let cutoff = now - self.window_len;
        while self.latencies.front().is_some_and(|&(t, _)| t <= cutoff) {
            self.latencies.pop_front();
        }
        while self.completions.front().is_some_and(|&t| t <= cutoff) {
            self.completions.pop_front();
        }
        while self.util_samples.front().is_some_and(|s| s.t <= cutoff) {
            self.util_samples.pop_front();
        }
    }

    pub fn record_completion(&mut self, t: f64, latency: f64) {
        self.advance(t);
        self.latencies.push_back((t, latency));
        self.completions.push_back(t);
    }

    pub fn record_util(&mut self, sample: UtilSample) {
        self.advance(sample.t);
        self.util_samples.push_back(sample);
    }

    pub fn latencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.latencies.iter().map(|&(_, l)| l)
    }

    pub fn completion_count(&self) -> usize {
        self.completions.len()
    }

    pub fn p95(&self) -> f64 {
        let samples: Vec<f64> = self.latencies().collect();
        p95_of(&samples)
    }

    pub fn throughput(&self) -> f64 {
        self.completions.len() as f64 / self.window_len
    }

    /// Mean of the retained utilization samples, or `None` before the first scrape.
    pub fn mean_util(&self) -> Option<UtilSample> {
        mean_of(self.util_samples.iter(), self.now)
    }

    /// Mean over samples newer than `now - span`.
    pub fn mean_util_since(&self, span: f64) -> Option<UtilSample> {
        let cutoff = self.now - span;
        mean_of(self.util_samples.iter().filter(|s| s.t > cutoff), self.now)
    }
}

fn mean_of<'a>(samples: impl Iterator<Item = &'a UtilSample>, now: f64) -> Option<UtilSample> {
    let mut acc = UtilSample {
        t: now,
        cpu: 0.0,
        mem: 0.0,
        gpu: 0.0,
        cpu_pool_busy: 0.0,
    };
    let mut n = 0usize;
    for s in samples {
        acc.cpu += s.cpu;
        acc.mem += s.mem;
        acc.gpu += s.gpu;
        acc.cpu_pool_busy += s.cpu_pool_busy;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let k = n as f64;
    acc.cpu /= k;
    acc.mem /= k;
    acc.gpu /= k;
    acc.cpu_pool_busy /= k;
    Some(acc)
}

/// Per-pod resource constants (millicores, bytes) and node capacity.
/// CPU usage interpolates linearly from idle to busy with the pod's busy fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationModel {
    pub node_millicores: f64,
    pub node_mem_bytes: f64,
    pub cpu_pod_idle_m: f64,
    pub cpu_pod_busy_m: f64,
    pub cpu_pod_mem: f64,
    pub gpu_pod_idle_m: f64,
    pub gpu_pod_busy_m: f64,
    pub gpu_pod_mem: f64,
    /// Cache pods that only contribute a constant footprint.
    pub memory_pods: usize,
    pub memory_pod_m: f64,
    pub memory_pod_mem: f64,
}

impl Default for UtilizationModel {
    fn default() -> Self {
        Self {
            node_millicores: 16_000.0,
            node_mem_bytes: 32.0 * 1024.0 * 1024.0 * 1024.0,
            cpu_pod_idle_m: 715.0,
            cpu_pod_busy_m: 1062.0,
            cpu_pod_mem: 540e6,
            gpu_pod_idle_m: 42.0,
            gpu_pod_busy_m: 72.0,
            gpu_pod_mem: 825e6,
            memory_pods: 3,
            memory_pod_m: 3.0,
            memory_pod_mem: 3.0 * 1024.0 * 1024.0,
        }
    }
}

/// Node-level GPU utilization: mean busy fraction of Ready GPU pods, scaled
/// by how much of the device budget is in use.
pub fn gpu_utilization(cluster: &ClusterModel) -> f64 {
    let active: Vec<f64> = cluster
        .ready_pods(Pool::Gpu)
        .map(|p| p.busy_fraction())
        .collect();
    if active.is_empty() || cluster.gpu_device_budget() == 0 {
        return 0.0;
    }
    let mean = active.iter().sum::<f64>() / active.len() as f64;
    let occupancy = active.len() as f64 / cluster.gpu_device_budget() as f64;
    (mean * occupancy).clamp(0.0, 1.0)
}

/// Per-pod GPU busy fractions, the container-level view that does not enter the state.
pub fn gpu_pod_utilization(cluster: &ClusterModel) -> Vec<(u32, f64)> {
    cluster
        .ready_pods(Pool::Gpu)
        .map(|p| (p.id.0, p.busy_fraction()))
        .collect()
}

pub fn cpu_mem_utilization(cluster: &ClusterModel, model: &UtilizationModel) -> (f64, f64) {
    let mut millicores = model.memory_pods as f64 * model.memory_pod_m;
    let mut mem = model.memory_pods as f64 * model.memory_pod_mem;
    for pod in cluster.pods().iter().filter(|p| p.is_ready()) {
        let (idle, busy, bytes) = match pod.pool {
            Pool::Cpu => (model.cpu_pod_idle_m, model.cpu_pod_busy_m, model.cpu_pod_mem),
            Pool::Gpu => (model.gpu_pod_idle_m, model.gpu_pod_busy_m, model.gpu_pod_mem),
        };
        millicores += idle + (busy - idle) * pod.busy_fraction();
        mem += bytes;
    }
    (
        (millicores / model.node_millicores).clamp(0.0, 1.0),
        (mem / model.node_mem_bytes).clamp(0.0, 1.0),
    )
}

/// Mean busy fraction over Ready CPU-pool pods; zero when none are Ready.
pub fn cpu_pool_busy(cluster: &ClusterModel) -> f64 {
    let fractions: Vec<f64> = cluster
        .ready_pods(Pool::Cpu)
        .map(|p| p.busy_fraction())
        .collect();
    if fractions.is_empty() {
        0.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    }
}

pub fn sample_utilization(t: f64, cluster: &ClusterModel, model: &UtilizationModel) -> UtilSample {
    let (cpu, mem) = cpu_mem_utilization(cluster, model);
    UtilSample {
        t,
        cpu,
        mem,
        gpu: gpu_utilization(cluster),
        cpu_pool_busy: cpu_pool_busy(cluster),
    }
}

/// Immutable view of the current gauges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub users: usize,
    pub p95: f64,
    pub throughput: f64,
    pub gpu_util: f64,
    pub cpu_util: f64,
    pub mem_util: f64,
    pub gpu_replicas: usize,
    pub cpu_replicas: usize,
}

impl Snapshot {
    /// Builds a snapshot from the window; utilization is the window mean,
    /// falling back to an instantaneous sample before the first scrape.
    pub fn capture(
        window: &MetricsWindow,
        cluster: &ClusterModel,
        model: &UtilizationModel,
        t: f64,
        users: usize,
    ) -> Self {
        let util = window
            .mean_util()
            .unwrap_or_else(|| sample_utilization(t, cluster, model));
        Self {
            t,
            users,
            p95: window.p95(),
            throughput: window.throughput(),
            gpu_util: util.gpu,
            cpu_util: util.cpu,
            mem_util: util.mem,
            gpu_replicas: cluster.desired(Pool::Gpu),
            cpu_replicas: cluster.desired(Pool::Cpu),
        }
    }

    /// Prometheus text exposition format, version 0.0.4.
    pub fn to_exposition(&self) -> String {
        let mut out = String::new();
        let gauges = [
            ("kis_p95_seconds", self.p95),
            ("kis_throughput_rps", self.throughput),
            ("kis_gpu_util", self.gpu_util),
            ("kis_cpu_util", self.cpu_util),
            ("kis_mem_util", self.mem_util),
        ];
        for (name, value) in gauges {
            let _ = writeln!(out, "# TYPE {name} gauge");
            let _ = writeln!(out, "{name} {value}");
        }
        let _ = writeln!(out, "# TYPE kis_replicas gauge");
        let _ = writeln!(out, "kis_replicas{{pool=\"gpu\"}} {}", self.gpu_replicas);
        let _ = writeln!(out, "kis_replicas{{pool=\"cpu\"}} {}", self.cpu_replicas);
        out
    }

    pub fn to_series_row(&self) -> SeriesRow {
        SeriesRow {
            t: self.t,
            users: self.users,
            p95_s: self.p95,
            throughput_rps: self.throughput,
            gpu_util: self.gpu_util,
            cpu_util: self.cpu_util,
            mem_util: self.mem_util,
            gpu_replicas: self.gpu_replicas,
            cpu_replicas: self.cpu_replicas,
        }
    }
}

pub fn export_snapshot(
    window: &MetricsWindow,
    cluster: &ClusterModel,
    model: &UtilizationModel,
    t: f64,
    users: usize,
) -> String {
    Snapshot::capture(window, cluster, model, t, users).to_exposition()
}

/// One row of the per-episode time-series dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub users: usize,
    pub p95_s: f64,
    pub throughput_rps: f64,
    pub gpu_util: f64,
    pub cpu_util: f64,
    pub mem_util: f64,
    pub gpu_replicas: usize,
    pub cpu_replicas: usize,
}

pub const SERIES_CSV_HEADER: &str =
    "t,users,p95_s,throughput_rps,gpu_util,cpu_util,mem_util,gpu_replicas,cpu_replicas";

pub fn series_to_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from(SERIES_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.users,
            r.p95_s,
            r.throughput_rps,
            r.gpu_util,
            r.cpu_util,
            r.mem_util,
            r.gpu_replicas,
            r.cpu_replicas
        );
    }
    out
}
