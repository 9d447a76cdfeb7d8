//! Reference autoscalers: an HPA-style utilization controller and fixed
//! single-pool deployments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::SeriesRow;
use crate::sim::{Pool, RunStats, Simulation};
use crate::traffic::{PatternKind, PatternSpec, TrafficPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpaConfig {
    pub target_cpu_util: f64,
    pub min_replicas: usize,
    pub max_replicas: usize,
    pub sync_period: f64,
    pub stabilization_down: f64,
    pub tolerance: f64,
    /// Also scale the GPU pool from GPU busy fraction (ablation only).
    pub gpu_aware: bool,
}

impl Default for HpaConfig {
    fn default() -> Self {
        Self {
            target_cpu_util: 0.5,
            min_replicas: 1,
            max_replicas: 6,
            sync_period: 15.0,
            stabilization_down: 300.0,
            tolerance: 0.1,
            gpu_aware: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub duration: f64,
    pub cpu_replicas: usize,
    pub gpu_replicas: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            duration: 300.0,
            cpu_replicas: 3,
            gpu_replicas: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedConfig {
    pub pool: Pool,
    pub replicas: usize,
}

/// Desired replica count: `ceil(current * util / target)`, unchanged inside
/// the tolerance band, clamped to the configured bounds.
pub fn hpa_decide(current_replicas: usize, current_util: f64, cfg: &HpaConfig) -> usize {
    let ratio = current_util / cfg.target_cpu_util;
    let raw = if (ratio - 1.0).abs() <= cfg.tolerance {
        current_replicas
    } else {
        (current_replicas as f64 * ratio).ceil() as usize
    };
    raw.clamp(cfg.min_replicas, cfg.max_replicas)
}

/// [`hpa_decide`] with downscale stabilization: a lower recommendation is
/// applied only once lower recommendations have persisted for
/// `stabilization_down` seconds, and then the highest of them wins.
#[derive(Debug, Clone)]
pub struct HpaController {
    cfg: HpaConfig,
    down_since: Option<f64>,
    down_recs: Vec<usize>,
}

impl HpaController {
    pub fn new(cfg: HpaConfig) -> Self {
        Self {
            cfg,
            down_since: None,
            down_recs: Vec::new(),
        }
    }

    pub fn config(&self) -> &HpaConfig {
        &self.cfg
    }

    pub fn decide(&mut self, now: f64, current: usize, util: f64) -> usize {
        let rec = hpa_decide(current, util, &self.cfg);
        if rec >= current {
            self.down_since = None;
            self.down_recs.clear();
            return rec;
        }
        let since = *self.down_since.get_or_insert(now);
        self.down_recs.push(rec);
        if now - since >= self.cfg.stabilization_down {
            let desired = self.down_recs.iter().copied().max().unwrap_or(rec);
            self.down_since = None;
            self.down_recs.clear();
            desired
        } else {
            current
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselinePolicy {
    Hpa,
    FixedCpu,
    FixedGpu,
}

impl BaselinePolicy {
    pub fn name(self) -> &'static str {
        match self {
            BaselinePolicy::Hpa => "hpa",
            BaselinePolicy::FixedCpu => "fixed-cpu",
            BaselinePolicy::FixedGpu => "fixed-gpu",
        }
    }
}

impl fmt::Display for BaselinePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Summary of one simulated run, shared by baselines and the learned policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pattern: PatternKind,
    pub policy: String,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub throughput_rps: f64,
    pub completed: usize,
    pub mean_gpu_util: f64,
    pub mean_cpu_util: f64,
    pub mean_mem_util: f64,
    pub replica_changes: usize,
}

impl RunReport {
    pub fn from_stats(pattern: PatternKind, policy: &str, stats: &RunStats, duration: f64) -> Self {
        let (cpu, mem, gpu) = stats.mean_util();
        Self {
            pattern,
            policy: policy.to_string(),
            p95_ms: stats.p95() * 1e3,
            mean_ms: stats.mean_latency() * 1e3,
            throughput_rps: stats.completed() as f64 / duration,
            completed: stats.completed(),
            mean_gpu_util: gpu,
            mean_cpu_util: cpu,
            mean_mem_util: mem,
            replica_changes: stats.replica_changes,
        }
    }
}

/// Report plus the artifacts written beside it.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub report: RunReport,
    pub series: Vec<SeriesRow>,
    pub final_snapshot: String,
}

/// Seed shared by every policy evaluated on `pattern`.
pub fn traffic_seed(base_seed: u64, pattern: PatternKind) -> u64 {
    crate::rng::derive_seed(
        crate::rng::derive_seed(base_seed, crate::rng::streams::EVALUATION),
        pattern.index() as u64,
    )
}

pub fn run_baseline(
    policy: BaselinePolicy,
    pattern: PatternKind,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<BaselineRun> {
    let duration = cfg.baseline.duration;
    let spec = PatternSpec::new(pattern, &cfg.traffic, duration, seed);
    let traffic = TrafficPattern::new(spec)?;
    let (cpu, gpu) = match policy {
        BaselinePolicy::FixedCpu => (cfg.baseline.cpu_replicas, 0),
        BaselinePolicy::FixedGpu => (0, cfg.baseline.gpu_replicas),
        BaselinePolicy::Hpa => (
            cfg.baseline.cpu_replicas,
            if cfg.hpa.gpu_aware { cfg.baseline.gpu_replicas } else { 0 },
        ),
    };
    let mut sim = Simulation::with_cluster(cfg.sim.clone(), cpu, gpu, Some(traffic));
    sim.enable_series();

    match policy {
        BaselinePolicy::FixedCpu | BaselinePolicy::FixedGpu => sim.run_until(duration)?,
        BaselinePolicy::Hpa => {
            let mut cpu_ctl = HpaController::new(cfg.hpa.clone());
            let mut gpu_ctl = HpaController::new(HpaConfig {
                max_replicas: cfg.bounds.gpu_max.max(1),
                ..cfg.hpa.clone()
            });
            let period = cfg.hpa.sync_period;
            let mut t = 0.0;
            sim.run_until(0.0)?;
            while t < duration {
                t = (t + period).min(duration);
                sim.run_until(t)?;
                if t >= duration {
                    break;
                }
                let util = sim.window().mean_util_since(period);
                let cpu_busy = util.map_or(0.0, |u| u.cpu_pool_busy);
                let current = sim.cluster().desired(Pool::Cpu).max(1);
                let desired = cpu_ctl.decide(t, current, cpu_busy);
                sim.set_desired_replicas(Pool::Cpu, desired);
                if cfg.hpa.gpu_aware {
                    let gpu_busy = util.map_or(0.0, |u| u.gpu);
                    let current = sim.cluster().desired(Pool::Gpu).max(1);
                    let desired = gpu_ctl.decide(t, current, gpu_busy);
                    sim.set_desired_replicas(Pool::Gpu, desired);
                }
            }
        }
    }

    Ok(BaselineRun {
        report: RunReport::from_stats(pattern, policy.name(), sim.stats(), duration),
        series: sim.series().to_vec(),
        final_snapshot: sim.export_snapshot(),
    })
}
