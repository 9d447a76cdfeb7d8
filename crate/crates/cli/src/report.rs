//! Comparison reports. Speedups are derived from the stored p95 values
//! whenever a report is emitted.

use kis_core::baselines::{BaselinePolicy, RunReport};
use kis_core::traffic::PatternKind;
use serde::Serialize;

use crate::table::Table;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<RunReport>,
}

/// `reference_p95 / p95`; `None` when either side is missing or zero.
pub fn speedup(reference_p95: Option<f64>, p95: f64) -> Option<f64> {
    match reference_p95 {
        Some(r) if p95 > 0.0 && r > 0.0 => Some(r / p95),
        _ => None,
    }
}

#[derive(Debug, Serialize)]
struct JsonRow<'a> {
    #[serde(flatten)]
    run: &'a RunReport,
    speedup_vs_fixed_cpu: Option<f64>,
    speedup_vs_fixed_gpu: Option<f64>,
    speedup_vs_hpa: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl ComparisonReport {
    pub fn new(rows: Vec<RunReport>) -> Self {
        Self { rows }
    }

    pub fn patterns(&self) -> Vec<PatternKind> {
        let mut p: Vec<PatternKind> = self.rows.iter().map(|r| r.pattern).collect();
        p.dedup();
        p
    }

    pub fn find(&self, pattern: PatternKind, policy: &str) -> Option<&RunReport> {
        self.rows
            .iter()
            .find(|r| r.pattern == pattern && r.policy == policy)
    }

    pub fn p95_ms(&self, pattern: PatternKind, policy: &str) -> Option<f64> {
        self.find(pattern, policy).map(|r| r.p95_ms)
    }

    fn speedups(&self, r: &RunReport) -> [Option<f64>; 3] {
        [
            BaselinePolicy::FixedCpu,
            BaselinePolicy::FixedGpu,
            BaselinePolicy::Hpa,
        ]
        .map(|b| {
            if r.policy == b.name() {
                None
            } else {
                speedup(self.p95_ms(r.pattern, b.name()), r.p95_ms)
            }
        })
    }

    /// FixedCpu p95 over FixedGpu p95 for one pattern.
    pub fn gpu_speedup(&self, pattern: PatternKind) -> Option<f64> {
        let gpu = self.p95_ms(pattern, BaselinePolicy::FixedGpu.name())?;
        speedup(self.p95_ms(pattern, BaselinePolicy::FixedCpu.name()), gpu)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<JsonRow> = self
            .rows
            .iter()
            .map(|r| {
                let [c, g, h] = self.speedups(r);
                JsonRow {
                    run: r,
                    speedup_vs_fixed_cpu: c,
                    speedup_vs_fixed_gpu: g,
                    speedup_vs_hpa: h,
                }
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("report rows serialize");
        s.push('\n');
        s
    }

    fn table(&self, precise: bool) -> Table {
        let mut t = Table::new(&[
            "pattern",
            "policy",
            "p95_ms",
            "mean_ms",
            "throughput_rps",
            "completed",
            "gpu_util",
            "cpu_util",
            "mem_util",
            "replica_changes",
            "speedup_vs_fixed_cpu",
            "speedup_vs_fixed_gpu",
            "speedup_vs_hpa",
        ]);
        let num = |v: f64, digits: usize| {
            if precise {
                v.to_string()
            } else {
                format!("{v:.digits$}")
            }
        };
        let opt = |v: Option<f64>| {
            if precise {
                v.map(|x| x.to_string()).unwrap_or_default()
            } else {
                fmt_opt(v)
            }
        };
        for r in &self.rows {
            let [c, g, h] = self.speedups(r);
            t.push(vec![
                r.pattern.to_string(),
                r.policy.clone(),
                num(r.p95_ms, 2),
                num(r.mean_ms, 2),
                num(r.throughput_rps, 2),
                r.completed.to_string(),
                num(r.mean_gpu_util, 3),
                num(r.mean_cpu_util, 3),
                num(r.mean_mem_util, 3),
                r.replica_changes.to_string(),
                opt(c),
                opt(g),
                opt(h),
            ]);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.table(true).to_csv()
    }

    pub fn to_text(&self) -> String {
        self.table(false).to_aligned()
    }

    /// Per-pattern FixedGpu vs FixedCpu summary.
    pub fn gpu_speedup_table(&self) -> Table {
        let mut t = Table::new(&["pattern", "fixed_cpu_p95_ms", "fixed_gpu_p95_ms", "gpu_speedup"]);
        for p in self.patterns() {
            let cell = |v: Option<f64>| fmt_opt(v);
            t.push(vec![
                p.to_string(),
                cell(self.p95_ms(p, BaselinePolicy::FixedCpu.name())),
                cell(self.p95_ms(p, BaselinePolicy::FixedGpu.name())),
                cell(self.gpu_speedup(p)),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pattern: PatternKind, policy: &str, p95: f64) -> RunReport {
        RunReport {
            pattern,
            policy: policy.into(),
            p95_ms: p95,
            mean_ms: p95 / 2.0,
            throughput_rps: 10.0,
            completed: 100,
            mean_gpu_util: 0.5,
            mean_cpu_util: 0.5,
            mean_mem_util: 0.1,
            replica_changes: 0,
        }
    }

    #[test]
    fn speedups_are_derived_from_p95() {
        let r = ComparisonReport::new(vec![
            row(PatternKind::Ramp, "fixed-cpu", 300.0),
            row(PatternKind::Ramp, "fixed-gpu", 150.0),
        ]);
        assert_eq!(r.gpu_speedup(PatternKind::Ramp), Some(2.0));
        let csv = r.to_csv();
        assert!(csv.lines().nth(2).unwrap().contains(",2,"));
        assert!(r.to_json().contains("\"speedup_vs_fixed_cpu\": 2.0"));
    }
}
