//! Actor-critic pair: a categorical policy with three independent heads and
//! a scalar state-value critic, each its own tanh MLP.

use rand::Rng;

use super::nn::{Mlp, MlpCache};
use crate::env::{ActionTriple, Observation, HEAD_SIZES, OBS_DIM};
use crate::error::{Error, Result};
use crate::Scalar;

pub const LOGITS: usize = HEAD_SIZES[0] + HEAD_SIZES[1] + HEAD_SIZES[2];

/// Offsets of each head inside the actor output.
const HEAD_START: [usize; 3] = [0, HEAD_SIZES[0], HEAD_SIZES[0] + HEAD_SIZES[1]];

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
}

/// Gradient accumulators shaped like an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticGrads<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
}

impl<T: Scalar> ActorCriticGrads<T> {
    pub fn zeros_for(policy: &ActorCritic<T>) -> Self {
        Self {
            actor: policy.actor.zeros_like(),
            critic: policy.critic.zeros_like(),
        }
    }

    pub fn clear(&mut self) {
        self.actor.fill_zero();
        self.critic.fill_zero();
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.actor.tensors();
        v.extend(self.critic.tensors());
        v
    }
}

/// Head probabilities and critic value for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: [Vec<f64>; 3],
    pub value: f64,
}

impl PolicyOutput {
    pub fn log_prob(&self, idx: [usize; 3]) -> f64 {
        (0..3).map(|h| self.probs[h][idx[h]].ln()).sum()
    }

    /// Sum of the three head entropies.
    pub fn entropy(&self) -> f64 {
        self.probs.iter().map(|p| entropy(p)).sum()
    }

    pub fn argmax(&self) -> [usize; 3] {
        let pick = |p: &[f64]| {
            let mut best = 0;
            for (i, v) in p.iter().enumerate() {
                if *v > p[best] {
                    best = i;
                }
            }
            best
        };
        [pick(&self.probs[0]), pick(&self.probs[1]), pick(&self.probs[2])]
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn obs_vector<T: Scalar>(obs: &Observation) -> Vec<T> {
    obs.to_array().iter().map(|v| T::from_f64_lossy(*v)).collect()
}

fn split_heads(logits: &[f64]) -> Result<[Vec<f64>; 3]> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite { what: "policy logits" });
    }
    let head = |h: usize| softmax(&logits[HEAD_START[h]..HEAD_START[h] + HEAD_SIZES[h]]);
    Ok([head(0), head(1), head(2)])
}

impl<T: Scalar> ActorCritic<T> {
    pub fn actor_dims(hidden: usize) -> [usize; 4] {
        [OBS_DIM, hidden, hidden, LOGITS]
    }

    pub fn critic_dims(hidden: usize) -> [usize; 4] {
        [OBS_DIM, hidden, hidden, 1]
    }

    /// Total parameters of both networks at the given hidden width.
    pub fn formula_count(hidden: usize) -> usize {
        Mlp::<T>::formula_count(&Self::actor_dims(hidden))
            + Mlp::<T>::formula_count(&Self::critic_dims(hidden))
    }

    /// Policy head starts near-uniform; the critic uses the plain fan-in scale.
    pub fn new<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        let actor = Mlp::init(&Self::actor_dims(hidden), 0.01, rng);
        let critic = Mlp::init(&Self::critic_dims(hidden), 1.0, rng);
        let net = Self { actor, critic };
        assert_eq!(net.param_count(), Self::formula_count(hidden));
        net
    }

    pub fn from_parts(actor: Mlp<T>, critic: Mlp<T>) -> Self {
        Self { actor, critic }
    }

    pub fn hidden(&self) -> usize {
        self.actor.layers[0].out
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count()
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut v = self.actor.tensors();
        v.extend(self.critic.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.actor.tensors_mut();
        v.extend(self.critic.tensors_mut());
        v
    }

    pub fn cast<U: Scalar>(&self) -> ActorCritic<U> {
        ActorCritic {
            actor: self.actor.cast(),
            critic: self.critic.cast(),
        }
    }

    pub fn logits(&self, obs: &Observation) -> Vec<f64> {
        let x = obs_vector::<T>(obs);
        self.actor.forward(&x).iter().map(|v| v.as_f64()).collect()
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        let x = obs_vector::<T>(obs);
        self.critic.forward(&x)[0].as_f64()
    }

    pub fn output(&self, obs: &Observation) -> Result<PolicyOutput> {
        let probs = split_heads(&self.logits(obs))?;
        Ok(PolicyOutput {
            probs,
            value: self.value(obs),
        })
    }

    /// Independent draw per head; the joint log-probability sums the heads.
    pub fn sample_action<R: Rng>(
        &self,
        obs: &Observation,
        rng: &mut R,
    ) -> Result<(ActionTriple, f64, f64)> {
        let out = self.output(obs)?;
        let idx = [
            sample_categorical(&out.probs[0], rng),
            sample_categorical(&out.probs[1], rng),
            sample_categorical(&out.probs[2], rng),
        ];
        let action = ActionTriple::from_indices(idx[0], idx[1], idx[2]);
        Ok((action, out.log_prob(idx), out.value))
    }

    /// Per-head argmax, lowest index on ties.
    pub fn greedy_action(&self, obs: &Observation) -> Result<ActionTriple> {
        let [g, c, p] = self.output(obs)?.argmax();
        Ok(ActionTriple::from_indices(g, c, p))
    }

    /// Forward pass keeping activations for [`ActorCritic::backward`].
    pub fn forward_cached(
        &self,
        x: &[T],
        actor_cache: &mut MlpCache<T>,
        critic_cache: &mut MlpCache<T>,
    ) -> Result<PolicyOutput> {
        self.actor.forward_cached(x, actor_cache);
        self.critic.forward_cached(x, critic_cache);
        let logits: Vec<f64> = actor_cache.output().iter().map(|v| v.as_f64()).collect();
        let value = critic_cache.output()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "critic value" });
        }
        Ok(PolicyOutput {
            probs: split_heads(&logits)?,
            value,
        })
    }

    pub fn backward(
        &self,
        actor_cache: &MlpCache<T>,
        critic_cache: &MlpCache<T>,
        d_logits: &[f64],
        d_value: f64,
        grads: &mut ActorCriticGrads<T>,
    ) {
        let dl: Vec<T> = d_logits.iter().map(|v| T::from_f64_lossy(*v)).collect();
        self.actor.backward(actor_cache, &dl, &mut grads.actor);
        self.critic
            .backward(critic_cache, &[T::from_f64_lossy(d_value)], &mut grads.critic);
    }
}

/// Index range of head `h` in the actor output.
pub fn head_range(h: usize) -> std::ops::Range<usize> {
    HEAD_START[h]..HEAD_START[h] + HEAD_SIZES[h]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn uniform_head_samples_evenly() {
        let p = softmax(&[0.0; 5]);
        let mut rng = seeded(3);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[sample_categorical(&p, &mut rng)] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.2).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let mut net: ActorCritic<f32> = ActorCritic::new(8, &mut seeded(1));
        net.actor.layers[2].bias[0] = f32::NAN;
        let obs = Observation::from_array([0.5; OBS_DIM]);
        assert!(matches!(
            net.sample_action(&obs, &mut seeded(2)),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn greedy_is_repeatable() {
        let net: ActorCritic<f32> = ActorCritic::new(16, &mut seeded(4));
        let obs = Observation::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert_eq!(net.greedy_action(&obs).unwrap(), net.greedy_action(&obs).unwrap());
    }

    #[test]
    fn entropy_of_uniform_is_log_n() {
        assert!((entropy(&softmax(&[0.0; 5])) - 5f64.ln()).abs() < 1e-12);
    }
}
