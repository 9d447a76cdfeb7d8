//! PPO agent: actor-critic networks, rollout storage, clipped-surrogate
//! updates, the training loop and checkpoints.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use buffer::{gae, RolloutBuffer, Transition};
pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
pub use policy::{ActorCritic, ActorCriticGrads, PolicyOutput};
pub use ppo::{clipped_objective, loss_and_grads, ppo_update, LossReport, Sample};
pub use train::{
    detect_convergence, evaluate_policy, train, EpisodeRecord, EvalRecord, PolicyRun, TrainOutcome,
    TrainState, Trainer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    /// Width of both hidden layers in each network.
    pub hidden: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub critic_lr: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub normalize_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 253,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            lr: 3e-4,
            critic_lr: 3e-4,
            adam_eps: 1e-8,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            normalize_advantages: true,
            normalize_rewards: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub episodes_per_update: usize,
    pub eval_every: usize,
    pub moving_window: usize,
    pub stop_on_convergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            episodes_per_update: 1,
            eval_every: 20,
            moving_window: 10,
            stop_on_convergence: false,
        }
    }
}
