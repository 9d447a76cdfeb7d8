//! Episode loop: rollouts, per-episode updates, periodic greedy evaluation
//! and best/final checkpoints.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::buffer::{RolloutBuffer, Transition};
use super::checkpoint::save_checkpoint;
use super::policy::ActorCritic;
use super::ppo::{ppo_update, LossReport};
use crate::baselines::{traffic_seed, RunReport};
use crate::config::ExperimentConfig;
use crate::env::{Env, StepTrace};
use crate::error::Result;
use crate::metrics::SeriesRow;
use crate::rng::{derive_seed, seeded, streams};
use crate::traffic::PatternKind;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Episodes completed.
    pub episode_index: usize,
    pub returns: Vec<f64>,
    pub moving_avg: f64,
    pub window: usize,
    pub best_moving_avg: Option<f64>,
    pub best_episode: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainState {
    pub fn new(window: usize) -> Self {
        Self {
            episode_index: 0,
            returns: Vec::new(),
            moving_avg: 0.0,
            window,
            best_moving_avg: None,
            best_episode: None,
            best_checkpoint: None,
        }
    }

    /// Mean of the last `window` entries (fewer early on); 0 when empty.
    pub fn moving_average(returns: &[f64], window: usize) -> f64 {
        let tail = &returns[returns.len().saturating_sub(window.max(1))..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }

    pub fn record_return(&mut self, ret: f64) {
        self.returns.push(ret);
        self.episode_index = self.returns.len();
        self.moving_avg = Self::moving_average(&self.returns, self.window);
    }

    /// True when the moving average beats every earlier one.
    pub fn is_new_best(&self) -> bool {
        self.best_moving_avg.is_none_or(|b| self.moving_avg > b)
    }
}

pub const CONVERGENCE_WINDOW: usize = 20;

/// Low spread over the last 20 returns and under 1% gain on the 20 before.
/// Needs 40 episodes to compare windows.
pub fn detect_convergence(state: &TrainState) -> bool {
    let w = CONVERGENCE_WINDOW;
    let r = &state.returns;
    if r.len() < 2 * w {
        return false;
    }
    let last = &r[r.len() - w..];
    let prev = &r[r.len() - 2 * w..r.len() - w];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let m = mean(last);
    let sd = (last.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w as f64).sqrt();
    let pm = mean(prev);
    let gain = if pm == 0.0 { m - pm } else { (m - pm) / pm.abs() };
    sd < 0.05 * m.abs() && gain < 0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    pub pattern: PatternKind,
    pub ret: f64,
    pub moving_avg: f64,
    pub loss: Option<LossReport>,
    pub p95_s: f64,
    pub steps: Vec<StepTrace>,
}

/// One greedy episode on the shared evaluation traffic.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub ret: f64,
    pub report: RunReport,
    pub steps: Vec<StepTrace>,
    pub series: Vec<SeriesRow>,
    pub final_snapshot: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub after_episode: usize,
    pub pattern: PatternKind,
    pub ret: f64,
    pub p95_ms: f64,
}

pub const POLICY_NAME: &str = "kiscaler";

/// Runs `policy` greedily for one episode of `pattern` on the traffic
/// baselines see for the same base seed.
pub fn evaluate_policy<T: Scalar>(
    policy: &ActorCritic<T>,
    cfg: &ExperimentConfig,
    pattern: PatternKind,
) -> Result<PolicyRun> {
    let mut env = Env::new(cfg);
    let mut obs = env.reset_with(0, pattern, traffic_seed(cfg.seed, pattern));
    env.sim_mut().enable_series();
    let mut ret = 0.0;
    let mut steps = Vec::new();
    loop {
        let action = policy.greedy_action(&obs)?;
        let step = env.step(action)?;
        ret += step.reward.total;
        steps.push(env.trace_line(&step));
        obs = step.observation;
        if step.done {
            break;
        }
    }
    let duration = env.config().episode_len();
    Ok(PolicyRun {
        ret,
        report: RunReport::from_stats(pattern, POLICY_NAME, env.sim().stats(), duration),
        steps,
        series: env.sim().series().to_vec(),
        final_snapshot: env.sim().export_snapshot(),
    })
}

/// Divides rewards by the running standard deviation of the discounted
/// return, so critic targets keep a stable scale while returns grow.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardScaler {
    gamma: f64,
    acc: f64,
    count: f64,
    mean: f64,
    m2: f64,
    episodes: usize,
}

impl RewardScaler {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn scale(&mut self, reward: f64, done: bool) -> f64 {
        self.acc = self.acc * self.gamma + reward;
        self.count += 1.0;
        let d = self.acc - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (self.acc - self.mean);
        if done {
            self.acc = 0.0;
            self.episodes += 1;
        }
        match self.divisor() {
            Some(d) => reward / d,
            None => reward,
        }
    }

    /// None until one episode's worth of statistics has accumulated.
    fn divisor(&self) -> Option<f64> {
        (self.episodes > 0 && self.std() > 1e-6).then(|| self.std())
    }

    pub fn std(&self) -> f64 {
        if self.count > 1.0 {
            (self.m2 / self.count).sqrt()
        } else {
            0.0
        }
    }
}

pub struct Trainer<T: Scalar = f32> {
    cfg: ExperimentConfig,
    env: Env,
    pub policy: ActorCritic<T>,
    pub optimizer: Adam<T>,
    buffer: RolloutBuffer,
    pub state: TrainState,
    action_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    pending_episodes: usize,
    scaler: Option<RewardScaler>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let mut init = seeded(derive_seed(cfg.seed, streams::POLICY_INIT));
        let policy = ActorCritic::new(cfg.ppo.hidden, &mut init);
        let optimizer = Adam::new(&policy, cfg.ppo.lr, cfg.ppo.adam_eps).with_critic_lr(cfg.ppo.critic_lr);
        Self {
            cfg: cfg.clone(),
            env: Env::new(cfg),
            policy,
            optimizer,
            buffer: RolloutBuffer::new(),
            state: TrainState::new(cfg.train.moving_window),
            action_rng: seeded(derive_seed(cfg.seed, streams::ACTION_SAMPLING)),
            batch_rng: seeded(derive_seed(cfg.seed, streams::MINIBATCH)),
            pending_episodes: 0,
            scaler: cfg.ppo.normalize_rewards.then(|| RewardScaler::new(cfg.ppo.gamma)),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Collects one stochastic episode and updates once enough episodes
    /// have accumulated.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let ep = self.state.episode_index;
        let mut obs = self.env.reset(ep);
        let mut ret = 0.0;
        let mut steps = Vec::new();
        loop {
            let (action, log_prob, value) = self.policy.sample_action(&obs, &mut self.action_rng)?;
            let step = self.env.step(action)?;
            ret += step.reward.total;
            self.buffer.push(Transition {
                obs: obs.to_array(),
                action: action.indices(),
                log_prob,
                value,
                reward: match self.scaler.as_mut() {
                    Some(s) => s.scale(step.reward.total, step.done),
                    None => step.reward.total,
                },
                done: step.done,
            });
            steps.push(self.env.trace_line(&step));
            obs = step.observation;
            if step.done {
                break;
            }
        }
        self.pending_episodes += 1;
        let loss = if self.pending_episodes >= self.cfg.train.episodes_per_update {
            self.pending_episodes = 0;
            self.buffer.finish(0.0, self.cfg.ppo.gamma, self.cfg.ppo.lambda);
            Some(ppo_update(
                &mut self.policy,
                &mut self.optimizer,
                &mut self.buffer,
                &self.cfg.ppo,
                &mut self.batch_rng,
            )?)
        } else {
            None
        };
        self.state.record_return(ret);
        Ok(EpisodeRecord {
            episode: ep + 1,
            pattern: self.env.pattern(),
            ret,
            moving_avg: self.state.moving_avg,
            loss,
            p95_s: self.env.sim().stats().p95(),
            steps,
        })
    }

    /// Greedy pass over every configured pattern; no learning.
    pub fn evaluate(&self) -> Result<Vec<EvalRecord>> {
        self.cfg
            .patterns
            .0
            .iter()
            .map(|p| {
                let run = evaluate_policy(&self.policy, &self.cfg, *p)?;
                Ok(EvalRecord {
                    after_episode: self.state.episode_index,
                    pattern: *p,
                    ret: run.ret,
                    p95_ms: run.report.p95_ms,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar = f32> {
    pub policy: ActorCritic<T>,
    pub state: TrainState,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub converged_at: Option<usize>,
}

pub const BEST_CHECKPOINT: &str = "best.kisc";
pub const FINAL_CHECKPOINT: &str = "final.kisc";

/// Trains for `episodes` episodes. With `out_dir`, writes `best.kisc` on
/// every new best moving average and `final.kisc` at the end.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    episodes: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(cfg);
    let mut records = Vec::with_capacity(episodes);
    let mut evals = Vec::new();
    let mut converged_at = None;
    for _ in 0..episodes {
        let rec = trainer.run_episode()?;
        if trainer.state.is_new_best() {
            trainer.state.best_moving_avg = Some(trainer.state.moving_avg);
            trainer.state.best_episode = Some(rec.episode);
            if let Some(dir) = out_dir {
                let path = dir.join(BEST_CHECKPOINT);
                trainer.state.best_checkpoint = Some(path.clone());
                save_checkpoint(&trainer.policy, &trainer.state, &path)?;
            }
        }
        let done = rec.episode;
        records.push(rec);
        if cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0 {
            evals.extend(trainer.evaluate()?);
        }
        if converged_at.is_none() && detect_convergence(&trainer.state) {
            converged_at = Some(done);
            if cfg.train.stop_on_convergence {
                break;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&trainer.policy, &trainer.state, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        policy: trainer.policy,
        state: trainer.state,
        episodes: records,
        evals,
        converged_at,
    })
}
