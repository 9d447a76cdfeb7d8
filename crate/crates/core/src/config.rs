//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment. The same keys are accepted by
//! `--set key=value` overrides. [`ExperimentConfig::to_text`] writes every
//! key, so an emitted config reproduces its run exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{PpoConfig, TrainConfig};
use crate::baselines::{BaselineConfig, HpaConfig};
use crate::env::{EnvConfig, PoolBounds, RewardWeights};
use crate::error::{Error, Result};
use crate::sim::SimConfig;
use crate::traffic::{PatternKind, TrafficConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub bounds: PoolBounds,
    pub traffic: TrafficConfig,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub hpa: HpaConfig,
    pub baseline: BaselineConfig,
    pub patterns: PatternList,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            sim: SimConfig::default(),
            bounds: PoolBounds::default(),
            traffic: TrafficConfig::default(),
            env: EnvConfig::default(),
            reward: RewardWeights::default(),
            ppo: PpoConfig::default(),
            train: TrainConfig::default(),
            hpa: HpaConfig::default(),
            baseline: BaselineConfig::default(),
            patterns: PatternList(PatternKind::ALL.to_vec()),
        }
    }
}

/// Comma-separated pattern names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternList(pub Vec<PatternKind>);

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(f64, usize, u64, bool);

impl ConfigValue for PatternList {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let kinds = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.parse::<PatternKind>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if kinds.is_empty() {
            return Err("empty pattern list".into());
        }
        Ok(PatternList(kinds))
    }

    fn format_value(&self) -> String {
        self.0
            .iter()
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        impl ExperimentConfig {
            /// Every recognized key, in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $($key => {
                        self.$($field).+ = <$ty as ConfigValue>::parse_value(value).map_err(|reason| {
                            Error::BadConfigValue {
                                key: $key.to_string(),
                                value: value.to_string(),
                                reason,
                            }
                        })?;
                    })*
                    other => return Err(Error::UnknownConfigKey(other.to_string())),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, <$ty as ConfigValue>::format_value(&self.$($field).+))),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed: u64,
    "patterns" => patterns: PatternList,

    "sim.base_service_time" => sim.service.base_time: f64,
    "sim.cpu_exponent" => sim.service.cpu_exponent: f64,
    "sim.gpu_exponent" => sim.service.gpu_exponent: f64,
    "sim.cpu_cap" => sim.service.cpu_cap: usize,
    "sim.gpu_cap" => sim.service.gpu_cap: usize,
    "sim.cpu_startup" => sim.service.cpu_startup: f64,
    "sim.gpu_startup" => sim.service.gpu_startup: f64,
    "sim.gpu_device_budget" => sim.gpu_device_budget: usize,
    "sim.scrape_interval" => sim.scrape_interval: f64,

    "metrics.window" => sim.window_len: f64,
    "metrics.node_millicores" => sim.utilization.node_millicores: f64,
    "metrics.node_mem_bytes" => sim.utilization.node_mem_bytes: f64,
    "metrics.cpu_pod_idle_m" => sim.utilization.cpu_pod_idle_m: f64,
    "metrics.cpu_pod_busy_m" => sim.utilization.cpu_pod_busy_m: f64,
    "metrics.cpu_pod_mem" => sim.utilization.cpu_pod_mem: f64,
    "metrics.gpu_pod_idle_m" => sim.utilization.gpu_pod_idle_m: f64,
    "metrics.gpu_pod_busy_m" => sim.utilization.gpu_pod_busy_m: f64,
    "metrics.gpu_pod_mem" => sim.utilization.gpu_pod_mem: f64,
    "metrics.memory_pods" => sim.utilization.memory_pods: usize,
    "metrics.memory_pod_m" => sim.utilization.memory_pod_m: f64,
    "metrics.memory_pod_mem" => sim.utilization.memory_pod_mem: f64,

    "cluster.cpu_min" => bounds.cpu_min: usize,
    "cluster.cpu_max" => bounds.cpu_max: usize,
    "cluster.gpu_min" => bounds.gpu_min: usize,
    "cluster.gpu_max" => bounds.gpu_max: usize,

    "traffic.u_min" => traffic.u_min: usize,
    "traffic.u_max" => traffic.u_max: usize,
    "traffic.hold" => traffic.hold: f64,
    "traffic.period" => traffic.period: f64,
    "traffic.spike_at" => traffic.spike_at: f64,
    "traffic.spike_len" => traffic.spike_len: f64,
    "traffic.random_interval" => traffic.random_interval: f64,

    "env.control_interval" => env.control_interval: f64,
    "env.steps_per_episode" => env.steps_per_episode: usize,
    "env.l_cap" => env.l_cap: f64,
    "env.theta_cap" => env.theta_cap: f64,
    "env.initial_cpu" => env.initial_cpu: usize,
    "env.initial_gpu" => env.initial_gpu: usize,

    "reward.alpha" => reward.alpha: f64,
    "reward.beta" => reward.beta: f64,
    "reward.gamma" => reward.gamma: f64,
    "reward.delta" => reward.delta: f64,

    "ppo.hidden" => ppo.hidden: usize,
    "ppo.clip" => ppo.clip: f64,
    "ppo.gamma" => ppo.gamma: f64,
    "ppo.lambda" => ppo.lambda: f64,
    "ppo.lr" => ppo.lr: f64,
    "ppo.critic_lr" => ppo.critic_lr: f64,
    "ppo.adam_eps" => ppo.adam_eps: f64,
    "ppo.epochs" => ppo.epochs: usize,
    "ppo.minibatch" => ppo.minibatch: usize,
    "ppo.entropy_coef" => ppo.entropy_coef: f64,
    "ppo.value_coef" => ppo.value_coef: f64,
    "ppo.normalize_advantages" => ppo.normalize_advantages: bool,
    "ppo.normalize_rewards" => ppo.normalize_rewards: bool,

    "train.episodes" => train.episodes: usize,
    "train.episodes_per_update" => train.episodes_per_update: usize,
    "train.eval_every" => train.eval_every: usize,
    "train.moving_window" => train.moving_window: usize,
    "train.stop_on_convergence" => train.stop_on_convergence: bool,

    "hpa.target_cpu_util" => hpa.target_cpu_util: f64,
    "hpa.min_replicas" => hpa.min_replicas: usize,
    "hpa.max_replicas" => hpa.max_replicas: usize,
    "hpa.sync_period" => hpa.sync_period: f64,
    "hpa.stabilization_down" => hpa.stabilization_down: f64,
    "hpa.tolerance" => hpa.tolerance: f64,
    "hpa.gpu_aware" => hpa.gpu_aware: bool,

    "baseline.duration" => baseline.duration: f64,
    "baseline.cpu_replicas" => baseline.cpu_replicas: usize,
    "baseline.gpu_replicas" => baseline.gpu_replicas: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line: 0,
            reason: format!("override `{kv}` is not `key=value`"),
        })?;
        self.set(key, value)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# effective experiment configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        let b = &self.bounds;
        if b.cpu_min > b.cpu_max || b.gpu_min > b.gpu_max {
            return fail(format!("pool bounds inverted: {b:?}"));
        }
        if b.total_max() == 0 {
            return fail("at least one pool needs a positive maximum".into());
        }
        if self.traffic.u_min > self.traffic.u_max {
            return fail("traffic.u_min > traffic.u_max".into());
        }
        if !(self.traffic.hold >= 0.0) || !(self.traffic.period > 0.0) || !(self.traffic.random_interval > 0.0) {
            return fail("traffic timing parameters must be positive".into());
        }
        let s = &self.sim.service;
        if !(s.base_time > 0.0) || s.cpu_cap == 0 || s.gpu_cap == 0 {
            return fail("service base time and caps must be positive".into());
        }
        if !(self.sim.window_len > 0.0) || !(self.sim.scrape_interval > 0.0) {
            return fail("metrics window and scrape interval must be positive".into());
        }
        if !(self.env.control_interval > 0.0) || self.env.steps_per_episode == 0 {
            return fail("env.control_interval and env.steps_per_episode must be positive".into());
        }
        if !(self.env.l_cap > 0.0) || !(self.env.theta_cap > 0.0) {
            return fail("normalization caps must be positive".into());
        }
        let init_cpu = self.env.initial_cpu;
        let init_gpu = self.env.initial_gpu;
        if init_cpu < b.cpu_min || init_cpu > b.cpu_max || init_gpu < b.gpu_min || init_gpu > b.gpu_max {
            return fail("initial replicas outside pool bounds".into());
        }
        let p = &self.ppo;
        if p.hidden == 0 || p.epochs == 0 || p.minibatch == 0 || !(p.lr > 0.0) || !(p.clip > 0.0) {
            return fail("ppo hyperparameters must be positive".into());
        }
        if !(0.0..=1.0).contains(&p.gamma) || !(0.0..=1.0).contains(&p.lambda) {
            return fail("ppo.gamma and ppo.lambda must lie in [0, 1]".into());
        }
        if self.train.episodes_per_update == 0 || self.train.moving_window == 0 {
            return fail("train.episodes_per_update and train.moving_window must be positive".into());
        }
        let h = &self.hpa;
        if h.min_replicas > h.max_replicas || h.min_replicas == 0 {
            return fail("hpa replica bounds must satisfy 1 <= min <= max".into());
        }
        if !(h.tolerance >= 0.0) || !(h.target_cpu_util > 0.0) || !(h.sync_period > 0.0) {
            return fail("hpa target, tolerance and sync period must be positive".into());
        }
        if !(self.baseline.duration > 0.0) {
            return fail("baseline.duration must be positive".into());
        }
        Ok(())
    }
}
