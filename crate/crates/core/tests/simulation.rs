use kis_core::config::ExperimentConfig;
use kis_core::env::{ActionTriple, Env, ACTION_COUNT};
use kis_core::rng::seeded;
use kis_core::sim::{Phase, Pool, SimConfig, Simulation};
use kis_core::traffic::{PatternKind, PatternSpec, TrafficConfig, TrafficPattern};
use proptest::prelude::*;
use rand::Rng;

/// Drives a fresh environment with random actions, checking bookkeeping
/// after every decision.
fn random_scenario(seed: u64) -> Result<(), String> {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    let mut env = Env::new(&cfg);
    let mut rng = seeded(seed ^ 0xA5A5);
    env.reset(rng.gen_range(0..4));
    while !env.is_done() {
        let action = ActionTriple::from_flat(rng.gen_range(0..ACTION_COUNT));
        env.step(action).map_err(|e| e.to_string())?;
        let acc = env.sim().accounting();
        if !acc.balanced() {
            return Err(format!("unbalanced at t={}: {acc:?}", env.sim().now()));
        }
        env.sim().verify_request_accounting()?;
        let c = env.sim().cluster();
        if c.active_gpu_count() > c.gpu_device_budget() {
            return Err("GPU budget exceeded".into());
        }
    }
    if (env.sim().now() - 300.0).abs() > 1e-9 {
        return Err(format!("episode ended at {}", env.sim().now()));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn random_actions_conserve_requests(seed in any::<u64>()) {
        prop_assert_eq!(random_scenario(seed), Ok(()));
    }
}

#[test]
fn scale_to_zero_then_back_loses_nothing() {
    let spec = PatternSpec::constant(30, 0.5, 200.0);
    let traffic = TrafficPattern::new(spec).unwrap();
    let mut sim = Simulation::with_cluster(SimConfig::default(), 3, 1, Some(traffic));
    sim.run_until(40.0).unwrap();
    sim.set_desired_replicas(Pool::Cpu, 0);
    sim.set_desired_replicas(Pool::Gpu, 0);
    sim.run_until(60.0).unwrap();
    let acc = sim.accounting();
    assert!(acc.balanced());
    assert_eq!(acc.in_service + acc.queued, 0, "drained pods keep no work");
    assert!(acc.backlog > 0, "arrivals wait in the backlog");
    sim.set_desired_replicas(Pool::Cpu, 2);
    sim.run_until(120.0).unwrap();
    sim.verify_request_accounting().unwrap();
    let waited = sim
        .requests()
        .iter()
        .filter(|r| r.arrived_at < 60.0 && r.arrived_at > 41.0)
        .all(|r| r.completed_at.is_some());
    assert!(waited, "backlogged requests complete once capacity returns");
}

#[test]
fn gpu_standby_stays_pending_under_single_device() {
    let mut sim = Simulation::with_cluster(SimConfig::default(), 1, 1, None);
    sim.set_desired_replicas(Pool::Gpu, 3);
    sim.run_until(30.0).unwrap();
    let c = sim.cluster();
    assert_eq!(c.count_in_phase(Pool::Gpu, Phase::Ready), 1);
    assert_eq!(c.count_in_phase(Pool::Gpu, Phase::Pending), 2);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let run = || {
        let spec = PatternSpec::new(PatternKind::Random, &TrafficConfig::default(), 300.0, 17);
        let mut sim = Simulation::with_cluster(
            SimConfig::default(),
            2,
            1,
            Some(TrafficPattern::new(spec).unwrap()),
        );
        sim.run_until(300.0).unwrap();
        sim.stats().latencies.clone()
    };
    assert_eq!(run(), run());
}
