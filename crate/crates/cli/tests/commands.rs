use std::path::{Path, PathBuf};

use kis_cli::{effective_config, run_args, CommonArgs};
use kis_core::agent::load_checkpoint;
use kis_core::Policy;

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kis-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn kis(args: &[&str], out: &Path) -> anyhow::Result<String> {
    let mut full = vec!["kis"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", out.to_str().unwrap()]);
    run_args(full)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn train_writes_logs_checkpoints_and_trace() {
    let out = scratch("train");
    kis(&["train", "--episodes", "3", "--seed", "9"], &out).unwrap();
    let log = read(&out.join("training.csv"));
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,pattern,return,moving_avg,policy_loss,value_loss,entropy"
    );
    assert_eq!(lines.count(), 3);
    assert_eq!(read(&out.join("trace.jsonl")).lines().count(), 60);
    assert!(read(&out.join("config.txt")).contains("seed = 9"));
    let (_, state): (Policy, _) = load_checkpoint(&out.join("final.kisc")).unwrap();
    assert_eq!(state.episode_index, 3);
    assert!(out.join("best.kisc").exists());
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn replay_of_one_episode_gives_twenty_plot_rows() {
    let out = scratch("replay");
    kis(&["train", "--episodes", "1"], &out).unwrap();
    let trace = out.join("trace.jsonl");
    let text = kis(&["replay", trace.to_str().unwrap()], &out).unwrap();
    assert!(text.starts_with("steps: 20  episodes: 1"));
    let plot = read(&out.join("replay_plot.csv"));
    assert_eq!(plot.lines().count(), 21);

    let empty = out.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let text = kis(&["replay", empty.to_str().unwrap()], &out).unwrap();
    assert!(text.starts_with("steps: 0"));

    let bad = out.join("bad.jsonl");
    std::fs::write(&bad, "{\"episode\": 0}\n").unwrap();
    let err = kis(&["replay", bad.to_str().unwrap()], &out).unwrap_err();
    assert!(format!("{err:#}").contains("malformed trace line 1"));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn evaluate_compares_every_policy_per_pattern() {
    let out = scratch("eval");
    kis(&["train", "--episodes", "2"], &out).unwrap();
    let ckpt = out.join("final.kisc");
    let eval_out = out.join("eval");
    let args = ["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--patterns", "ramp,spike"];
    kis(&args, &eval_out).unwrap();
    let first = read(&eval_out.join("report.csv"));
    assert_eq!(first.lines().count(), 1 + 2 * 4);
    for policy in ["kiscaler", "fixed-gpu", "fixed-cpu", "hpa"] {
        assert!(eval_out.join("series").join(format!("ramp_{policy}.csv")).exists());
        assert!(eval_out.join("snapshots").join(format!("spike_{policy}.prom")).exists());
    }
    let json: serde_json::Value = serde_json::from_str(&read(&eval_out.join("report.json"))).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 8);
    kis(&args, &eval_out).unwrap();
    assert_eq!(first, read(&eval_out.join("report.csv")));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn baseline_reports_gpu_speedup() {
    let out = scratch("baseline");
    let text = kis(&["baseline", "--patterns", "random"], &out).unwrap();
    assert!(text.contains("gpu_speedup"));
    let speed = read(&out.join("baseline_speedup.csv"));
    assert!(speed.starts_with("pattern,fixed_cpu_p95_ms,fixed_gpu_p95_ms,gpu_speedup\nrandom,"));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn flags_override_file_and_set() {
    let dir = scratch("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("exp.txt");
    std::fs::write(&file, "seed = 3\nppo.lr = 0.001\n").unwrap();
    let args = CommonArgs {
        config: Some(file),
        seed: Some(11),
        patterns: Some("spike".into()),
        out: dir.clone(),
        set: vec!["ppo.lr=0.002".into(), "seed=5".into()],
    };
    let cfg = effective_config(&args, Some(7)).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.ppo.lr, 0.002);
    assert_eq!(cfg.train.episodes, 7);
    assert_eq!(cfg.patterns.0.len(), 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_inputs_are_errors() {
    let out = scratch("bad");
    assert!(kis(&["baseline", "--set", "nonsense"], &out).is_err());
    assert!(kis(&["baseline", "--set", "no.such.key=1"], &out).is_err());
    assert!(kis(&["baseline", "--patterns", "sawtooth"], &out).is_err());
    assert!(kis(&["evaluate", "--checkpoint", "/definitely/missing.kisc"], &out).is_err());
    std::fs::remove_dir_all(&out).ok();
}
