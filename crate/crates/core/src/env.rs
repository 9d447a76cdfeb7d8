//! RL environment over the simulator: 10-feature observations, the 5x5x2
//! multi-discrete action space and the composite latency/utilization/overhead
//! reward.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::Snapshot;
use crate::rng;
use crate::sim::{Pool, RoutingPref, SimConfig, Simulation};
use crate::traffic::{PatternKind, PatternSpec, TrafficConfig, TrafficPattern};

pub const OBS_DIM: usize = 10;
pub const DELTAS: [i32; 5] = [-2, -1, 0, 1, 2];
pub const HEAD_SIZES: [usize; 3] = [5, 5, 2];
pub const ACTION_COUNT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolBounds {
    pub cpu_min: usize,
    pub cpu_max: usize,
    pub gpu_min: usize,
    pub gpu_max: usize,
}

impl Default for PoolBounds {
    fn default() -> Self {
        Self {
            cpu_min: 1,
            cpu_max: 6,
            gpu_min: 0,
            gpu_max: 3,
        }
    }
}

impl PoolBounds {
    pub fn min(&self, pool: Pool) -> usize {
        match pool {
            Pool::Cpu => self.cpu_min,
            Pool::Gpu => self.gpu_min,
        }
    }

    pub fn max(&self, pool: Pool) -> usize {
        match pool {
            Pool::Cpu => self.cpu_max,
            Pool::Gpu => self.gpu_max,
        }
    }

    pub fn total_max(&self) -> usize {
        self.cpu_max + self.gpu_max
    }

    pub fn clamp(&self, pool: Pool, current: usize, delta: i32) -> usize {
        let target = current as i64 + delta as i64;
        target.clamp(self.min(pool) as i64, self.max(pool) as i64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Simulated seconds between decisions.
    pub control_interval: f64,
    pub steps_per_episode: usize,
    /// Latency normalization cap, seconds.
    pub l_cap: f64,
    /// Throughput normalization cap, requests/second.
    pub theta_cap: f64,
    pub initial_cpu: usize,
    pub initial_gpu: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_interval: 15.0,
            steps_per_episode: 20,
            l_cap: 10.0,
            theta_cap: 100.0,
            initial_cpu: 3,
            initial_gpu: 1,
        }
    }
}

impl EnvConfig {
    pub fn episode_len(&self) -> f64 {
        self.control_interval * self.steps_per_episode as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.25,
            delta: 0.0,
        }
    }
}

/// Normalized state vector. Every component lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub n_replicas: f64,
    pub u_gpu: f64,
    pub l_p95: f64,
    pub theta_req: f64,
    pub u_cpu: f64,
    pub u_mem: f64,
    pub delta_l: f64,
    pub delta_theta: f64,
    pub t_norm: f64,
    pub p_id: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.n_replicas,
            self.u_gpu,
            self.l_p95,
            self.theta_req,
            self.u_cpu,
            self.u_mem,
            self.delta_l,
            self.delta_theta,
            self.t_norm,
            self.p_id,
        ]
    }

    pub fn from_array(v: [f64; OBS_DIM]) -> Self {
        Self {
            n_replicas: v[0],
            u_gpu: v[1],
            l_p95: v[2],
            theta_req: v[3],
            u_cpu: v[4],
            u_mem: v[5],
            delta_l: v[6],
            delta_theta: v[7],
            t_norm: v[8],
            p_id: v[9],
        }
    }
}

/// Clip-and-shift trend: zero change maps to 0.5.
pub fn trend(current: f64, previous: f64, cap: f64) -> f64 {
    let v = ((current - previous) / cap).clamp(-1.0, 1.0);
    (v + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTriple {
    pub d_gpu: i32,
    pub d_cpu: i32,
    pub pref: RoutingPref,
}

impl ActionTriple {
    pub const HOLD: ActionTriple = ActionTriple {
        d_gpu: 0,
        d_cpu: 0,
        pref: RoutingPref::CpuFirst,
    };

    /// From per-head category indices (delta index, delta index, pref index).
    pub fn from_indices(gpu: usize, cpu: usize, pref: usize) -> Self {
        Self {
            d_gpu: DELTAS[gpu],
            d_cpu: DELTAS[cpu],
            pref: if pref == 0 {
                RoutingPref::CpuFirst
            } else {
                RoutingPref::GpuFirst
            },
        }
    }

    pub fn indices(&self) -> [usize; 3] {
        let pos = |d: i32| (d + 2) as usize;
        [
            pos(self.d_gpu),
            pos(self.d_cpu),
            match self.pref {
                RoutingPref::CpuFirst => 0,
                RoutingPref::GpuFirst => 1,
            },
        ]
    }

    /// Row-major (d_gpu, d_cpu, pref) flattening of the 50-action space.
    pub fn from_flat(index: usize) -> Self {
        assert!(index < ACTION_COUNT, "action index {index} out of range");
        Self::from_indices(index / 10, (index / 2) % 5, index % 2)
    }

    pub fn flat(&self) -> usize {
        let [g, c, p] = self.indices();
        g * 10 + c * 2 + p
    }

    pub fn pref_flag(&self) -> u8 {
        self.indices()[2] as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub action: ActionTriple,
    pub prev_gpu: usize,
    pub prev_cpu: usize,
    pub desired_gpu: usize,
    pub desired_cpu: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub latency_term: f64,
    pub gpu_util_term: f64,
    pub overhead_term: f64,
    pub smoothness_term: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl RewardBreakdown {
    pub fn compose(
        latency: f64,
        gpu_util: f64,
        overhead: f64,
        smoothness: f64,
        w: RewardWeights,
    ) -> Self {
        let total = -w.alpha * latency + w.beta * gpu_util - w.gamma * overhead - w.delta * smoothness;
        Self {
            latency_term: latency,
            gpu_util_term: gpu_util,
            overhead_term: overhead,
            smoothness_term: smoothness,
            total,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
        }
    }

    pub fn recomputed_total(&self) -> f64 {
        -self.alpha * self.latency_term + self.beta * self.gpu_util_term
            - self.gamma * self.overhead_term
            - self.delta * self.smoothness_term
    }
}

/// Replicas the offered load needs, in units of one CPU pod at full
/// concurrency, never below the combined pool minimum.
pub fn demand_estimate(offered_rps: f64, per_replica_rps: f64, floor: usize) -> usize {
    let need = if offered_rps <= 0.0 {
        0
    } else {
        (offered_rps / per_replica_rps).ceil() as usize
    };
    need.max(floor)
}

pub fn replica_overhead(total_replicas: usize, demand: usize, bounds: &PoolBounds) -> f64 {
    let excess = total_replicas.saturating_sub(demand);
    excess as f64 / bounds.total_max() as f64
}

pub fn smoothness(action: &ActionTriple) -> f64 {
    (action.d_gpu.unsigned_abs() + action.d_cpu.unsigned_abs()) as f64 / 4.0
}

/// Outcome of one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub applied: AppliedAction,
    pub snapshot: Snapshot,
    pub done: bool,
}

/// One line of the per-step JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub episode: usize,
    pub step: usize,
    pub pattern: PatternKind,
    pub t: f64,
    pub observation: [f64; OBS_DIM],
    pub action: (i32, i32, u8),
    pub reward: RewardBreakdown,
    pub gpu_replicas: usize,
    pub cpu_replicas: usize,
    pub p95_s: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct EnvSetup {
    sim: SimConfig,
    traffic: TrafficConfig,
    bounds: PoolBounds,
    env: EnvConfig,
    weights: RewardWeights,
    base_seed: u64,
    patterns: Vec<PatternKind>,
}

/// Episodic environment. Each episode is a fresh simulation; the pattern
/// rotates with the episode index.
#[derive(Debug, Clone)]
pub struct Env {
    setup: EnvSetup,
    sim: Simulation,
    pattern: PatternKind,
    episode: usize,
    step: usize,
    done: bool,
    prev_p95: f64,
    prev_tput: f64,
}

impl Env {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let setup = EnvSetup {
            sim: cfg.sim.clone(),
            traffic: cfg.traffic.clone(),
            bounds: cfg.bounds.clone(),
            env: cfg.env.clone(),
            weights: cfg.reward,
            base_seed: cfg.seed,
            patterns: if cfg.patterns.0.is_empty() {
                PatternKind::ALL.to_vec()
            } else {
                cfg.patterns.0.clone()
            },
        };
        let sim = Simulation::new(setup.sim.clone());
        let mut env = Self {
            setup,
            sim,
            pattern: PatternKind::Ramp,
            episode: 0,
            step: 0,
            done: true,
            prev_p95: 0.0,
            prev_tput: 0.0,
        };
        env.reset(0);
        env
    }

    pub fn config(&self) -> &EnvConfig {
        &self.setup.env
    }

    pub fn bounds(&self) -> &PoolBounds {
        &self.setup.bounds
    }

    pub fn weights(&self) -> RewardWeights {
        self.setup.weights
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Simulation {
        &mut self.sim
    }

    pub fn pattern(&self) -> PatternKind {
        self.pattern
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn pattern_for_episode(&self, episode_index: usize) -> PatternKind {
        self.setup.patterns[episode_index % self.setup.patterns.len()]
    }

    pub fn episode_seed(&self, episode_index: usize) -> u64 {
        rng::derive_seed(
            rng::derive_seed(self.setup.base_seed, rng::streams::EPISODE),
            episode_index as u64,
        )
    }

    /// Fresh cluster for training episode `episode_index`.
    pub fn reset(&mut self, episode_index: usize) -> Observation {
        let pattern = self.pattern_for_episode(episode_index);
        let seed = self.episode_seed(episode_index);
        self.reset_with(episode_index, pattern, seed)
    }

    /// Fresh cluster with an explicit pattern and traffic seed.
    pub fn reset_with(&mut self, episode_index: usize, pattern: PatternKind, seed: u64) -> Observation {
        let spec = PatternSpec::new(
            pattern,
            &self.setup.traffic,
            self.setup.env.episode_len(),
            seed,
        );
        let traffic = TrafficPattern::new(spec).expect("traffic config validated upstream");
        self.sim = Simulation::with_cluster(
            self.setup.sim.clone(),
            self.setup.env.initial_cpu,
            self.setup.env.initial_gpu,
            Some(traffic),
        );
        self.sim
            .run_until(0.0)
            .expect("fresh simulation starts at zero");
        self.pattern = pattern;
        self.episode = episode_index;
        self.step = 0;
        self.done = false;
        let snap = self.sim.snapshot();
        self.prev_p95 = snap.p95;
        self.prev_tput = snap.throughput;
        self.observation_from(&snap)
    }

    fn observation_from(&self, snap: &Snapshot) -> Observation {
        let e = &self.setup.env;
        let replicas = (snap.gpu_replicas + snap.cpu_replicas) as f64;
        Observation {
            n_replicas: (replicas / self.setup.bounds.total_max() as f64).clamp(0.0, 1.0),
            u_gpu: snap.gpu_util.clamp(0.0, 1.0),
            l_p95: (snap.p95 / e.l_cap).clamp(0.0, 1.0),
            theta_req: (snap.throughput / e.theta_cap).clamp(0.0, 1.0),
            u_cpu: snap.cpu_util.clamp(0.0, 1.0),
            u_mem: snap.mem_util.clamp(0.0, 1.0),
            delta_l: trend(snap.p95, self.prev_p95, e.l_cap),
            delta_theta: trend(snap.throughput, self.prev_tput, e.theta_cap),
            t_norm: (self.step as f64 / e.steps_per_episode as f64).clamp(0.0, 1.0),
            p_id: self.pattern.id_scalar(),
        }
    }

    /// Current observation without advancing time; trends are measured
    /// against the previous decision point.
    pub fn observe(&self) -> Observation {
        self.observation_from(&self.sim.snapshot())
    }

    /// Clamps the deltas into the pool bounds and forwards them to the cluster.
    pub fn decode_and_apply(&mut self, action: ActionTriple) -> AppliedAction {
        let b = &self.setup.bounds;
        let prev_gpu = self.sim.cluster().desired(Pool::Gpu);
        let prev_cpu = self.sim.cluster().desired(Pool::Cpu);
        let desired_gpu = b.clamp(Pool::Gpu, prev_gpu, action.d_gpu);
        let desired_cpu = b.clamp(Pool::Cpu, prev_cpu, action.d_cpu);
        self.sim.set_routing_pref(action.pref);
        self.sim.set_desired_replicas(Pool::Gpu, desired_gpu);
        self.sim.set_desired_replicas(Pool::Cpu, desired_cpu);
        AppliedAction {
            action,
            prev_gpu,
            prev_cpu,
            desired_gpu,
            desired_cpu,
        }
    }

    /// Offered request rate of the current user population, if every request
    /// were served at base latency.
    pub fn offered_rps(&self) -> f64 {
        let users = self.sim.users() as f64;
        users / (self.setup.traffic.hold + self.setup.sim.service.base_time)
    }

    pub fn reward(&self, obs: &Observation, applied: &AppliedAction) -> RewardBreakdown {
        let b = &self.setup.bounds;
        let per_replica = self.setup.sim.service.sustainable_rate(Pool::Cpu);
        let demand = demand_estimate(self.offered_rps(), per_replica, b.cpu_min + b.gpu_min);
        let total = applied.desired_gpu + applied.desired_cpu;
        RewardBreakdown::compose(
            obs.l_p95,
            obs.u_gpu,
            replica_overhead(total, demand, b),
            smoothness(&applied.action),
            self.setup.weights,
        )
    }

    pub fn step(&mut self, action: ActionTriple) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let applied = self.decode_and_apply(action);
        let t_next = self.sim.now() + self.setup.env.control_interval;
        self.sim.run_until(t_next)?;
        self.step += 1;
        let snap = self.sim.snapshot();
        let observation = self.observation_from(&snap);
        let reward = self.reward(&observation, &applied);
        self.prev_p95 = snap.p95;
        self.prev_tput = snap.throughput;
        self.done = self.step >= self.setup.env.steps_per_episode;
        Ok(Step {
            observation,
            reward,
            applied,
            snapshot: snap,
            done: self.done,
        })
    }

    pub fn trace_line(&self, step: &Step) -> StepTrace {
        let a = step.applied.action;
        StepTrace {
            episode: self.episode,
            step: self.step,
            pattern: self.pattern,
            t: self.sim.now(),
            observation: step.observation.to_array(),
            action: (a.d_gpu, a.d_cpu, a.pref_flag()),
            reward: step.reward,
            gpu_replicas: step.applied.desired_gpu,
            cpu_replicas: step.applied.desired_cpu,
            p95_s: step.snapshot.p95,
            done: step.done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> Env {
        Env::new(&ExperimentConfig::default())
    }

    #[test]
    fn latency_saturates_at_cap() {
        let mut e = env();
        e.prev_p95 = 12.0;
        let snap = Snapshot {
            p95: 12.0,
            ..e.sim().snapshot()
        };
        let obs = e.observation_from(&snap);
        assert_eq!(obs.l_p95, 1.0);
        assert_eq!(obs.delta_l, 0.5);
    }

    #[test]
    fn zero_trend_maps_to_midpoint() {
        assert_eq!(trend(0.3, 0.3, 10.0), 0.5);
        assert_eq!(trend(25.0, 0.0, 10.0), 1.0);
        assert_eq!(trend(0.0, 25.0, 10.0), 0.0);
    }

    #[test]
    fn pattern_ids() {
        assert_eq!(PatternKind::Random.id_scalar(), 2.0 / 3.0);
        assert_eq!(PatternKind::Ramp.id_scalar(), 0.0);
        assert_eq!(PatternKind::Spike.id_scalar(), 1.0);
    }

    #[test]
    fn clamp_at_bounds() {
        let b = PoolBounds::default();
        assert_eq!(b.clamp(Pool::Gpu, 1, -2), 0);
        assert_eq!(b.clamp(Pool::Cpu, 3, 2), 5);
        assert_eq!(b.clamp(Pool::Cpu, 6, 2), 6);
    }

    #[test]
    fn flat_index_enumeration() {
        let last = ActionTriple::from_flat(49);
        assert_eq!((last.d_gpu, last.d_cpu, last.pref), (2, 2, RoutingPref::GpuFirst));
        let first = ActionTriple::from_flat(0);
        assert_eq!((first.d_gpu, first.d_cpu, first.pref), (-2, -2, RoutingPref::CpuFirst));
        // Independent enumeration: nested loops in row-major order.
        let mut i = 0;
        for g in DELTAS {
            for c in DELTAS {
                for p in [RoutingPref::CpuFirst, RoutingPref::GpuFirst] {
                    let a = ActionTriple::from_flat(i);
                    assert_eq!((a.d_gpu, a.d_cpu, a.pref), (g, c, p));
                    assert_eq!(a.flat(), i);
                    i += 1;
                }
            }
        }
        assert_eq!(i, ACTION_COUNT);
    }

    #[test]
    fn reward_arithmetic_with_default_weights() {
        let r = RewardBreakdown::compose(0.2, 0.8, 0.4, 0.0, RewardWeights::default());
        assert!((r.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reward_isolates_latency_without_load() {
        let b = PoolBounds::default();
        let demand = demand_estimate(0.0, 13.1, b.cpu_min + b.gpu_min);
        let overhead = replica_overhead(b.cpu_min + b.gpu_min, demand, &b);
        let r = RewardBreakdown::compose(0.3, 0.0, overhead, 0.0, RewardWeights::default());
        assert_eq!(r.total, -0.3);
    }

    #[test]
    fn reset_rotates_patterns_and_starts_at_initial_replicas() {
        let mut e = env();
        let obs = e.reset(0);
        assert_eq!(e.pattern(), PatternKind::Ramp);
        assert_eq!(obs.t_norm, 0.0);
        assert_eq!(e.sim().cluster().desired(Pool::Gpu), 1);
        assert_eq!(e.sim().cluster().desired(Pool::Cpu), 3);
        e.reset(5);
        assert_eq!(e.pattern(), PatternKind::Periodic);
    }

    #[test]
    fn episode_runs_twenty_steps_over_300_seconds() {
        let mut e = env();
        e.reset(1);
        for i in 1..=20 {
            let s = e.step(ActionTriple::HOLD).unwrap();
            assert_eq!(s.done, i == 20);
        }
        assert_eq!(e.sim().now(), 300.0);
        assert!(matches!(e.step(ActionTriple::HOLD), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn equal_seeds_give_equal_rewards() {
        let run = || {
            let mut e = env();
            e.reset(2);
            (0..20)
                .map(|i| e.step(ActionTriple::from_flat((i * 7) % 50)).unwrap().reward.total)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trace_line_serializes() {
        let mut e = env();
        e.reset(0);
        let s = e.step(ActionTriple::from_flat(49)).unwrap();
        let line = serde_json::to_string(&e.trace_line(&s)).unwrap();
        let back: StepTrace = serde_json::from_str(&line).unwrap();
        assert_eq!(back.action, (2, 2, 1));
        assert_eq!(back.step, 1);
    }

    proptest! {
        #[test]
        fn decode_stays_within_bounds(gpu in 0usize..=3, cpu in 1usize..=6, action in 0usize..50) {
            let mut e = env();
            e.sim_mut().set_desired_replicas(Pool::Gpu, gpu);
            e.sim_mut().set_desired_replicas(Pool::Cpu, cpu);
            let applied = e.decode_and_apply(ActionTriple::from_flat(action));
            let b = PoolBounds::default();
            prop_assert!(applied.desired_gpu >= b.gpu_min && applied.desired_gpu <= b.gpu_max);
            prop_assert!(applied.desired_cpu >= b.cpu_min && applied.desired_cpu <= b.cpu_max);
        }

        #[test]
        fn reward_is_decreasing_in_latency(l1 in 0.0f64..1.0, l2 in 0.0f64..1.0,
                                           u in 0.0f64..1.0, o in 0.0f64..1.0) {
            let w = RewardWeights::default();
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let a = RewardBreakdown::compose(lo, u, o, 0.0, w);
            let b = RewardBreakdown::compose(hi, u, o, 0.0, w);
            prop_assert!(a.total >= b.total);
            prop_assert!((a.total - a.recomputed_total()).abs() < 1e-12);
        }
    }
}
