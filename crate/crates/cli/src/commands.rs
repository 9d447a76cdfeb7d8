use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kis_core::agent::{self, evaluate_policy, load_checkpoint, train::POLICY_NAME};
use kis_core::baselines::{run_baseline, BaselinePolicy, RunReport};
use kis_core::config::ExperimentConfig;
use kis_core::env::StepTrace;
use kis_core::metrics::{series_to_csv, SeriesRow};
use kis_core::traffic::PatternKind;
use kis_core::Policy;
use rayon::prelude::*;

use crate::replay;
use crate::report::ComparisonReport;
use crate::table::Table;

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_file(&out.join("config.txt"), cfg.to_text())
}

fn jsonl(steps: &[StepTrace]) -> String {
    let mut s = String::new();
    for st in steps {
        s.push_str(&serde_json::to_string(st).expect("trace lines serialize"));
        s.push('\n');
    }
    s
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_config(cfg, out)?;
    let outcome = agent::train::<f32>(cfg, cfg.train.episodes, Some(out))?;

    let mut log = Table::new(&[
        "episode",
        "pattern",
        "return",
        "moving_avg",
        "policy_loss",
        "value_loss",
        "entropy",
    ]);
    let mut by_pattern = Table::new(&[
        "episode",
        "pattern",
        "return",
        "latency_term",
        "gpu_util_term",
        "overhead_term",
        "smoothness_term",
    ]);
    let mut trace = String::new();
    for e in &outcome.episodes {
        log.push(vec![
            e.episode.to_string(),
            e.pattern.to_string(),
            e.ret.to_string(),
            e.moving_avg.to_string(),
            opt_num(e.loss.map(|l| l.policy_loss)),
            opt_num(e.loss.map(|l| l.value_loss)),
            opt_num(e.loss.map(|l| l.entropy)),
        ]);
        let sum = |f: fn(&StepTrace) -> f64| e.steps.iter().map(f).sum::<f64>().to_string();
        by_pattern.push(vec![
            e.episode.to_string(),
            e.pattern.to_string(),
            e.ret.to_string(),
            sum(|s| s.reward.latency_term),
            sum(|s| s.reward.gpu_util_term),
            sum(|s| s.reward.overhead_term),
            sum(|s| s.reward.smoothness_term),
        ]);
        trace.push_str(&jsonl(&e.steps));
    }
    let mut evals = Table::new(&["after_episode", "pattern", "return", "p95_ms"]);
    for ev in &outcome.evals {
        evals.push(vec![
            ev.after_episode.to_string(),
            ev.pattern.to_string(),
            ev.ret.to_string(),
            ev.p95_ms.to_string(),
        ]);
    }
    write_file(&out.join("training.csv"), log.to_csv())?;
    write_file(&out.join("pattern_rewards.csv"), by_pattern.to_csv())?;
    write_file(&out.join("trace.jsonl"), trace)?;
    write_file(&out.join("evaluations.csv"), evals.to_csv())?;

    let st = &outcome.state;
    let mut s = String::new();
    let _ = writeln!(s, "episodes: {}", st.episode_index);
    let _ = writeln!(s, "final moving average return: {:.4}", st.moving_avg);
    if let (Some(b), Some(e)) = (st.best_moving_avg, st.best_episode) {
        let _ = writeln!(s, "best moving average return: {b:.4} (episode {e})");
    }
    match outcome.converged_at {
        Some(e) => {
            let _ = writeln!(s, "converged at episode {e}");
        }
        None => {
            let _ = writeln!(s, "not converged");
        }
    }
    let _ = writeln!(s, "evaluation passes: {}", outcome.evals.len() / cfg.patterns.0.len().max(1));
    let _ = writeln!(s, "outputs written to {}", out.display());
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Job {
    Learned(PatternKind),
    Baseline(PatternKind, BaselinePolicy),
}

struct JobOutput {
    report: RunReport,
    series: Vec<SeriesRow>,
    snapshot: String,
    steps: Vec<StepTrace>,
}

fn run_job(job: Job, cfg: &ExperimentConfig, policy: Option<&Policy>) -> Result<JobOutput> {
    Ok(match job {
        Job::Learned(p) => {
            let policy = policy.expect("learned jobs carry a policy");
            let run = evaluate_policy(policy, cfg, p)?;
            JobOutput {
                report: run.report,
                series: run.series,
                snapshot: run.final_snapshot,
                steps: run.steps,
            }
        }
        Job::Baseline(p, b) => {
            let run = run_baseline(b, p, cfg, kis_core::baselines::traffic_seed(cfg.seed, p))?;
            JobOutput {
                report: run.report,
                series: run.series,
                snapshot: run.final_snapshot,
                steps: Vec::new(),
            }
        }
    })
}

fn run_jobs(jobs: &[Job], cfg: &ExperimentConfig, policy: Option<&Policy>, out: &Path) -> Result<(ComparisonReport, String)> {
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|j| run_job(*j, cfg, policy))
        .collect::<Result<_>>()?;
    let mut trace = String::new();
    for o in &outputs {
        let stem = format!("{}_{}", o.report.pattern, o.report.policy);
        write_file(&out.join("series").join(format!("{stem}.csv")), series_to_csv(&o.series))?;
        write_file(&out.join("snapshots").join(format!("{stem}.prom")), &o.snapshot)?;
        trace.push_str(&jsonl(&o.steps));
    }
    let report = ComparisonReport::new(outputs.into_iter().map(|o| o.report).collect());
    Ok((report, trace))
}

const BASELINES: [BaselinePolicy; 3] = [
    BaselinePolicy::FixedGpu,
    BaselinePolicy::FixedCpu,
    BaselinePolicy::Hpa,
];

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<(ComparisonReport, String)> {
    let (policy, _state) = load_checkpoint::<f32>(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_config(cfg, out)?;
    let mut jobs = Vec::new();
    for p in &cfg.patterns.0 {
        jobs.push(Job::Learned(*p));
        jobs.extend(BASELINES.iter().map(|b| Job::Baseline(*p, *b)));
    }
    let (report, trace) = run_jobs(&jobs, cfg, Some(&policy), out)?;
    write_file(&out.join("eval_trace.jsonl"), trace)?;
    write_file(&out.join("report.json"), report.to_json())?;
    write_file(&out.join("report.csv"), report.to_csv())?;
    let text = report.to_text();
    write_file(&out.join("report.txt"), &text)?;
    let mut s = text;
    for p in report.patterns() {
        let (Some(k), Some(c)) = (
            report.p95_ms(p, POLICY_NAME),
            report.p95_ms(p, BaselinePolicy::FixedCpu.name()),
        ) else {
            continue;
        };
        let _ = writeln!(s, "{p}: {POLICY_NAME} p95 {k:.1} ms vs fixed-cpu {c:.1} ms");
    }
    Ok((report, s))
}

pub fn baseline(cfg: &ExperimentConfig, out: &Path) -> Result<(ComparisonReport, String)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_config(cfg, out)?;
    let jobs: Vec<Job> = cfg
        .patterns
        .0
        .iter()
        .flat_map(|p| BASELINES.iter().map(move |b| Job::Baseline(*p, *b)))
        .collect();
    let (report, _) = run_jobs(&jobs, cfg, None, out)?;
    write_file(&out.join("baseline.json"), report.to_json())?;
    write_file(&out.join("baseline.csv"), report.to_csv())?;
    let speedups = report.gpu_speedup_table();
    write_file(&out.join("baseline_speedup.csv"), speedups.to_csv())?;
    let mut text = report.to_text();
    text.push('\n');
    text.push_str(&speedups.to_aligned());
    write_file(&out.join("baseline.txt"), &text)?;
    Ok((report, text))
}

pub fn replay(trace_path: &Path, out: &Path) -> Result<String> {
    let text = std::fs::read_to_string(trace_path)
        .with_context(|| format!("reading {}", trace_path.display()))?;
    let trace = replay::parse_trace(&text)
        .with_context(|| format!("in {}", trace_path.display()))?;
    let summary = replay::summarize(&trace);
    let plot: PathBuf = out.join("replay_plot.csv");
    write_file(&plot, summary.plot.to_csv())?;
    let mut s = summary.render(&trace);
    let _ = writeln!(s, "plot data written to {}", plot.display());
    Ok(s)
}
