use std::collections::BTreeMap;

use kis_core::agent::{load_checkpoint, save_checkpoint, ActorCritic, TrainState};
use kis_core::env::{Observation, OBS_DIM};
use kis_core::metrics::{p95_of, percentile_nearest_rank, Snapshot};
use kis_core::rng::seeded;
use kis_core::{Error, Policy};
use proptest::prelude::*;
use rand::Rng;

/// Minimal text-format reader: `# TYPE` lines and `name{labels} value`.
fn parse_exposition(text: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut types = BTreeMap::new();
    let mut values = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# TYPE ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or(format!("line {n}: no name"))?;
            let kind = parts.next().ok_or(format!("line {n}: no type"))?;
            types.insert(name.to_string(), kind.to_string());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.rsplit_once(' ').ok_or(format!("line {n}: no value"))?;
        let base = key.split('{').next().unwrap_or(key);
        if !types.contains_key(base) {
            return Err(format!("line {n}: sample before TYPE for {base}"));
        }
        let v: f64 = value.parse().map_err(|_| format!("line {n}: bad value {value}"))?;
        values.insert(key.to_string(), v);
    }
    Ok(values)
}

fn sort_oracle(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = (p * s.len() as f64).ceil().max(1.0) as usize;
    s[rank - 1]
}

proptest! {
    #[test]
    fn p95_matches_sort_oracle(samples in prop::collection::vec(0.0f64..100.0, 1..400)) {
        prop_assert_eq!(p95_of(&samples), sort_oracle(&samples, 0.95));
    }

    #[test]
    fn percentile_is_an_order_statistic(samples in prop::collection::vec(-1e3f64..1e3, 1..100), p in 0.01f64..1.0) {
        let v = percentile_nearest_rank(&samples, p);
        prop_assert!(samples.contains(&v));
    }

    #[test]
    fn exposition_round_trips(
        p95 in 0.0f64..20.0, tput in 0.0f64..500.0,
        g in 0.0f64..1.0, c in 0.0f64..1.0, m in 0.0f64..1.0,
        gr in 0usize..4, cr in 0usize..8,
    ) {
        let snap = Snapshot {
            t: 15.0, users: 10, p95, throughput: tput,
            gpu_util: g, cpu_util: c, mem_util: m,
            gpu_replicas: gr, cpu_replicas: cr,
        };
        let parsed = parse_exposition(&snap.to_exposition()).unwrap();
        prop_assert_eq!(parsed["kis_p95_seconds"], p95);
        prop_assert_eq!(parsed["kis_throughput_rps"], tput);
        prop_assert_eq!(parsed["kis_gpu_util"], g);
        prop_assert_eq!(parsed["kis_cpu_util"], c);
        prop_assert_eq!(parsed["kis_mem_util"], m);
        prop_assert_eq!(parsed["kis_replicas{pool=\"gpu\"}"], gr as f64);
        prop_assert_eq!(parsed["kis_replicas{pool=\"cpu\"}"], cr as f64);
    }
}

#[test]
fn checkpoint_preserves_greedy_actions() {
    let dir = std::env::temp_dir().join(format!("kis-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("policy.kisc");
    let net: Policy = ActorCritic::new(64, &mut seeded(5));
    let mut state = TrainState::new(10);
    state.record_return(1.25);
    save_checkpoint(&net, &state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"KISC1");
    let (back, st): (Policy, _) = load_checkpoint(&path).unwrap();
    assert_eq!(st, state);
    let mut rng = seeded(6);
    for _ in 0..100 {
        let obs = Observation::from_array(std::array::from_fn::<f64, OBS_DIM, _>(|_| rng.gen()));
        assert_eq!(net.greedy_action(&obs).unwrap(), back.greedy_action(&obs).unwrap());
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let r = load_checkpoint::<f32>(std::path::Path::new("/nonexistent/nowhere.kisc"));
    assert!(matches!(r, Err(Error::Io { .. })));
}
