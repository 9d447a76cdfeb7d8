//! Clipped-surrogate update with analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::buffer::RolloutBuffer;
use super::nn::MlpCache;
use super::policy::{head_range, ActorCritic, ActorCriticGrads, LOGITS};
use super::PpoConfig;
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::Scalar;

/// Per-sample clipped objective `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// One training sample with its final (possibly normalized) advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: [f64; OBS_DIM],
    pub action: [usize; 3],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

impl LossReport {
    fn add(&mut self, o: &LossReport) {
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.total += o.total;
        self.clip_fraction += o.clip_fraction;
        self.minibatches += 1;
    }

    fn averaged(mut self) -> Self {
        let n = self.minibatches.max(1) as f64;
        self.policy_loss /= n;
        self.value_loss /= n;
        self.entropy /= n;
        self.total /= n;
        self.clip_fraction /= n;
        self
    }
}

/// Loss terms on `samples`:
/// `policy + value_coef * value - entropy_coef * entropy`, all means.
/// Adds gradients into `grads` when given.
pub fn loss_and_grads<T: Scalar>(
    policy: &ActorCritic<T>,
    samples: &[Sample],
    cfg: &PpoConfig,
    mut grads: Option<&mut ActorCriticGrads<T>>,
) -> Result<LossReport> {
    if samples.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let m = samples.len() as f64;
    let mut rep = LossReport::default();
    let mut clipped = 0usize;
    let mut ac = MlpCache::default();
    let mut cc = MlpCache::default();
    for s in samples {
        let x: Vec<T> = s.obs.iter().map(|v| T::from_f64_lossy(*v)).collect();
        let out = policy.forward_cached(&x, &mut ac, &mut cc)?;
        let log_prob = out.log_prob(s.action);
        let ratio = (log_prob - s.old_log_prob).exp();
        let a = s.advantage;
        let surr1 = ratio * a;
        let surr2 = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        rep.policy_loss -= surr1.min(surr2) / m;
        if surr2 < surr1 {
            clipped += 1;
        }
        let err = out.value - s.ret;
        rep.value_loss += err * err / m;
        let head_entropy: Vec<f64> = out.probs.iter().map(|p| super::policy::entropy(p)).collect();
        rep.entropy += head_entropy.iter().sum::<f64>() / m;

        if let Some(g) = grads.as_deref_mut() {
            let d_logp = if surr1 <= surr2 { -a * ratio / m } else { 0.0 };
            let mut d_logits = [0.0; LOGITS];
            for h in 0..3 {
                let p = &out.probs[h];
                let hh = head_entropy[h];
                for (j, k) in head_range(h).enumerate() {
                    let onehot = if j == s.action[h] { 1.0 } else { 0.0 };
                    let ent = cfg.entropy_coef / m * p[j] * (p[j].ln() + hh);
                    d_logits[k] = d_logp * (onehot - p[j]) + ent;
                }
            }
            let d_value = cfg.value_coef * 2.0 * err / m;
            policy.backward(&ac, &cc, &d_logits, d_value, g);
        }
    }
    rep.total = rep.policy_loss + cfg.value_coef * rep.value_loss - cfg.entropy_coef * rep.entropy;
    rep.clip_fraction = clipped as f64 / m;
    rep.minibatches = 1;
    if !rep.total.is_finite() {
        return Err(Error::NonFinite { what: "ppo loss" });
    }
    Ok(rep)
}

/// Samples from a finished buffer, normalizing advantages if configured.
pub fn samples_from(buffer: &RolloutBuffer, normalize: bool) -> Vec<Sample> {
    let mut adv = buffer.advantages.clone();
    if normalize && adv.len() > 1 {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt() + 1e-8;
        for a in &mut adv {
            *a = (*a - mean) / sd;
        }
    }
    buffer
        .transitions
        .iter()
        .zip(adv)
        .zip(&buffer.returns)
        .map(|((t, a), r)| Sample {
            obs: t.obs,
            action: t.action,
            old_log_prob: t.log_prob,
            advantage: a,
            ret: *r,
        })
        .collect()
}

/// Epochs of shuffled minibatch steps over `buffer`, which is then cleared.
/// The report averages the pre-step losses of every minibatch.
pub fn ppo_update<T: Scalar, R: Rng>(
    policy: &mut ActorCritic<T>,
    optimizer: &mut Adam<T>,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossReport> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if buffer.advantages.len() != buffer.len() {
        buffer.finish(0.0, cfg.gamma, cfg.lambda);
    }
    let samples = samples_from(buffer, cfg.normalize_advantages);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = ActorCriticGrads::zeros_for(policy);
    let mut total = LossReport::default();
    let mb = cfg.minibatch.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let batch: Vec<Sample> = chunk.iter().map(|i| samples[*i].clone()).collect();
            grads.clear();
            let rep = loss_and_grads(policy, &batch, cfg, Some(&mut grads))?;
            optimizer.step(policy, &grads);
            total.add(&rep);
        }
    }
    buffer.clear();
    Ok(total.averaged())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::buffer::Transition;
    use crate::rng::seeded;

    #[test]
    fn clip_identity() {
        assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert_eq!(clipped_objective(1.1, 1.0, 0.2), 1.1);
    }

    fn sample_buffer(net: &ActorCritic<f64>, n: usize) -> RolloutBuffer {
        let mut rng = seeded(11);
        let mut buf = RolloutBuffer::new();
        for i in 0..n {
            let obs: [f64; OBS_DIM] = std::array::from_fn(|_| rng.gen());
            let o = crate::env::Observation::from_array(obs);
            let (a, lp, v) = net.sample_action(&o, &mut rng).unwrap();
            buf.push(Transition {
                obs,
                action: a.indices(),
                log_prob: lp,
                value: v,
                reward: rng.gen_range(-1.0..1.0),
                done: i + 1 == n,
            });
        }
        buf.finish(0.0, 0.99, 0.95);
        buf
    }

    #[test]
    fn unchanged_params_give_unit_ratio() {
        let net: ActorCritic<f64> = ActorCritic::new(8, &mut seeded(2));
        let buf = sample_buffer(&net, 12);
        let samples = samples_from(&buf, false);
        let rep = loss_and_grads(&net, &samples, &PpoConfig::default(), None).unwrap();
        let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
        assert!((rep.policy_loss + mean_adv).abs() < 1e-12);
        assert_eq!(rep.clip_fraction, 0.0);
    }

    #[test]
    fn update_clears_buffer_and_is_deterministic() {
        let run = || {
            let mut net: ActorCritic<f64> = ActorCritic::new(8, &mut seeded(2));
            let mut buf = sample_buffer(&net, 20);
            let mut opt = Adam::new(&net, 3e-4, 1e-8);
            let rep = ppo_update(&mut net, &mut opt, &mut buf, &PpoConfig::default(), &mut seeded(5))
                .unwrap();
            assert!(buf.is_empty());
            (rep, net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert_eq!(a.minibatches, 4);
    }
}
