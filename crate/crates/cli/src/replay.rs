//! Offline summary of a JSON-lines step trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{Context, Result};
use kis_core::env::StepTrace;

use crate::table::Table;

pub fn parse_trace(text: &str) -> Result<Vec<StepTrace>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("malformed trace line {}", i + 1))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplaySummary {
    /// `(episode, pattern, return)` in trace order.
    pub returns: Vec<(usize, String, f64)>,
    /// Joint `(d_gpu, d_cpu, pref)` counts.
    pub actions: BTreeMap<(i32, i32, u8), usize>,
    pub steps: usize,
    pub plot: Table,
}

pub fn summarize(trace: &[StepTrace]) -> ReplaySummary {
    let mut s = ReplaySummary {
        plot: Table::new(&[
            "episode",
            "step",
            "t",
            "pattern",
            "gpu_replicas",
            "cpu_replicas",
            "p95_s",
            "reward",
            "latency_term",
            "gpu_util_term",
            "overhead_term",
        ]),
        ..Default::default()
    };
    for st in trace {
        match s.returns.last_mut() {
            Some((ep, _, r)) if *ep == st.episode => *r += st.reward.total,
            _ => s
                .returns
                .push((st.episode, st.pattern.to_string(), st.reward.total)),
        }
        *s.actions.entry(st.action).or_default() += 1;
        s.steps += 1;
        s.plot.push(vec![
            st.episode.to_string(),
            st.step.to_string(),
            st.t.to_string(),
            st.pattern.to_string(),
            st.gpu_replicas.to_string(),
            st.cpu_replicas.to_string(),
            st.p95_s.to_string(),
            st.reward.total.to_string(),
            st.reward.latency_term.to_string(),
            st.reward.gpu_util_term.to_string(),
            st.reward.overhead_term.to_string(),
        ]);
    }
    s
}

impl ReplaySummary {
    pub fn render(&self, trace: &[StepTrace]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "steps: {}  episodes: {}", self.steps, self.returns.len());
        if self.steps == 0 {
            return out;
        }
        let mut ret = Table::new(&["episode", "pattern", "return"]);
        for (ep, p, r) in &self.returns {
            ret.push(vec![ep.to_string(), p.clone(), format!("{r:.4}")]);
        }
        out.push_str(&ret.to_aligned());
        let mut hist = Table::new(&["d_gpu", "d_cpu", "pref", "count"]);
        for ((g, c, p), n) in &self.actions {
            hist.push(vec![g.to_string(), c.to_string(), p.to_string(), n.to_string()]);
        }
        out.push('\n');
        out.push_str(&hist.to_aligned());
        out.push('\n');
        let mut by_ep: BTreeMap<usize, (Vec<String>, Vec<String>)> = BTreeMap::new();
        for st in trace {
            let e = by_ep.entry(st.episode).or_default();
            e.0.push(st.gpu_replicas.to_string());
            e.1.push(st.cpu_replicas.to_string());
        }
        for (ep, (g, c)) in by_ep {
            let _ = writeln!(out, "episode {ep} gpu: {}", g.join(" "));
            let _ = writeln!(out, "episode {ep} cpu: {}", c.join(" "));
        }
        out
    }
}
