use kis_core::agent::{
    clipped_objective, gae, loss_and_grads, ActorCritic, ActorCriticGrads, PpoConfig, Sample,
};
use kis_core::env::{Observation, OBS_DIM};
use kis_core::rng::seeded;
use kis_core::Policy64;
use proptest::prelude::*;
use rand::Rng;

/// Samples whose ratios sit well away from the clip edges, some inside the
/// band and some outside it on either side.
fn samples(net: &Policy64, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = seeded(seed);
    let ratios = [0.7, 0.93, 1.0, 1.08, 1.35];
    (0..n)
        .map(|i| {
            let obs: [f64; OBS_DIM] = std::array::from_fn(|_| rng.gen());
            let out = net.output(&Observation::from_array(obs)).unwrap();
            let action = [rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(0..2)];
            let ratio: f64 = ratios[i % ratios.len()];
            Sample {
                obs,
                action,
                old_log_prob: out.log_prob(action) - ratio.ln(),
                advantage: rng.gen_range(-2.0..2.0),
                ret: rng.gen_range(-1.0..3.0),
            }
        })
        .collect()
}

fn total_loss(net: &Policy64, s: &[Sample], cfg: &PpoConfig) -> f64 {
    loss_and_grads(net, s, cfg, None).unwrap().total
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error over the given `(tensor, index)` entries.
fn check(net: &Policy64, s: &[Sample], entries: &[(usize, usize)]) -> f64 {
    let cfg = PpoConfig::default();
    let mut grads = ActorCriticGrads::zeros_for(net);
    loss_and_grads(net, s, &cfg, Some(&mut grads)).unwrap();
    let analytic = grads.tensors();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for &(k, i) in entries {
        let mut plus = net.clone();
        plus.tensors_mut()[k][i] += h;
        let mut minus = net.clone();
        minus.tensors_mut()[k][i] -= h;
        let fd = (total_loss(&plus, s, &cfg) - total_loss(&minus, s, &cfg)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[k][i], fd));
    }
    worst
}

#[test]
fn gradient_check_every_parameter_of_a_small_network() {
    let net: Policy64 = ActorCritic::new(6, &mut seeded(21));
    let s = samples(&net, 10, 5);
    let entries: Vec<(usize, usize)> = net
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    let worst = check(&net, &s, &entries);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_check_sampled_entries_of_the_full_network() {
    let cfg = PpoConfig::default();
    let net: Policy64 = ActorCritic::new(cfg.hidden, &mut seeded(3));
    let s = samples(&net, 10, 8);
    let mut rng = seeded(99);
    let mut entries = Vec::new();
    for (k, t) in net.tensors().iter().enumerate() {
        for _ in 0..12 {
            entries.push((k, rng.gen_range(0..t.len())));
        }
    }
    let worst = check(&net, &s, &entries);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn parameter_count_is_within_one_percent_of_137k() {
    let cfg = PpoConfig::default();
    let net: ActorCritic<f32> = ActorCritic::new(cfg.hidden, &mut seeded(1));
    // 10 -> h -> h -> 12 and 10 -> h -> h -> 1, weights plus biases.
    let h = cfg.hidden;
    let oracle = (10 * h + h) + (h * h + h) + (h * 12 + 12) + (10 * h + h) + (h * h + h) + (h + 1);
    assert_eq!(net.param_count(), oracle);
    let off = (net.param_count() as f64 - 137_000.0).abs() / 137_000.0;
    assert!(off <= 0.01, "{} parameters", net.param_count());
}

#[test]
fn clip_formula_identities() {
    assert!((clipped_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
    assert!((clipped_objective(0.5, 1.0, 0.2) - 0.5).abs() < 1e-12);
    assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    assert!((clipped_objective(1.5, -1.0, 0.2) + 1.5).abs() < 1e-12);
}

fn mc_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let g: f64 = rewards[t..]
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum();
            g - values[t]
        })
        .collect()
}

proptest! {
    #[test]
    fn gae_at_lambda_one_is_monte_carlo(
        rewards in prop::collection::vec(-5.0f64..5.0, 20),
        values in prop::collection::vec(-5.0f64..5.0, 20),
        gamma in prop::sample::select(vec![1.0, 0.99, 0.9]),
    ) {
        let mut dones = vec![false; 20];
        dones[19] = true;
        let (adv, ret) = gae(&rewards, &values, &dones, 123.0, gamma, 1.0);
        let oracle = mc_advantages(&rewards, &values, gamma);
        for t in 0..20 {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-9);
            prop_assert!((ret[t] - adv[t] - values[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_never_exceeds_either_branch(ratio in 0.0f64..3.0, adv in -5.0f64..5.0) {
        let o = clipped_objective(ratio, adv, 0.2);
        prop_assert!(o <= (ratio * adv).max(ratio.clamp(0.8, 1.2) * adv) + 1e-15);
    }

    #[test]
    fn head_softmax_sums_to_one(obs in prop::array::uniform10(0.0f64..=1.0), seed in 0u64..50) {
        let net: ActorCritic<f32> = ActorCritic::new(16, &mut seeded(seed));
        let out = net.output(&Observation::from_array(obs)).unwrap();
        for p in &out.probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_invariant_to_logit_shift(shift in -50.0f64..50.0, seed in 0u64..20) {
        let net: Policy64 = ActorCritic::new(8, &mut seeded(seed));
        let s = samples(&net, 6, seed + 1);
        let cfg = PpoConfig::default();
        let before = loss_and_grads(&net, &s, &cfg, None).unwrap();
        let mut shifted = net.clone();
        let out = shifted.actor.layers.last_mut().unwrap();
        for b in &mut out.bias[0..5] {
            *b += shift;
        }
        let after = loss_and_grads(&shifted, &s, &cfg, None).unwrap();
        prop_assert!((before.policy_loss - after.policy_loss).abs() < 1e-9);
        prop_assert!((before.entropy - after.entropy).abs() < 1e-9);
    }
}

#[test]
fn deterministic_peaked_heads_prefer_their_argmax() {
    let mut net: ActorCritic<f64> = ActorCritic::new(8, &mut seeded(2));
    let out_layer = net.actor.layers.last_mut().unwrap();
    out_layer.weight.fill(0.0);
    out_layer.bias.copy_from_slice(&[0., 0., 9., 0., 0., 9., 0., 0., 0., 0., 0., 9.]);
    let out = net.output(&Observation::from_array([0.3; OBS_DIM])).unwrap();
    let best = out.log_prob(out.argmax());
    assert_eq!(out.argmax(), [2, 0, 1]);
    for g in 0..5 {
        for c in 0..5 {
            for p in 0..2 {
                assert!(best >= out.log_prob([g, c, p]));
            }
        }
    }
}
