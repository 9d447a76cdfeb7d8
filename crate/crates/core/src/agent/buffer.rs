use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    /// Per-head category indices.
    pub action: [usize; 3],
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// On-policy trajectories since the last update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Fills advantages and returns; `bootstrap` values the state after the
    /// last stored step when that step is not terminal.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages.clear();
        self.returns.clear();
    }
}

/// Generalized advantage estimation. A `done` step does not bootstrap from
/// its successor. Returns `(advantages, advantages + values)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(rewards.len() == values.len() && values.len() == dones.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_td() {
        let (a, r) = gae(&[1.0], &[0.0], &[false], 0.0, 1.0, 1.0);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let (a, _) = gae(&[0.0; 6], &[0.0; 6], &[false; 6], 0.0, 0.99, 0.95);
        assert!(a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let (a, _) = gae(&[1.0, 2.0], &[0.5, 0.25], &[false, false], 4.0, 0.5, 0.0);
        assert!((a[0] - (1.0 + 0.5 * 0.25 - 0.5)).abs() < 1e-15);
        assert!((a[1] - (2.0 + 0.5 * 4.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn done_cuts_the_trace() {
        let (a, _) = gae(&[1.0, 10.0], &[0.0, 0.0], &[true, true], 0.0, 1.0, 1.0);
        assert_eq!(a, vec![1.0, 10.0]);
    }
}
