use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, TaskRecord};
use crate::context::Feature;
use crate::gateway::{round_cost, FeatureStats, MeanStd, UsageRecord};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tasks: usize,
    pub first_try_successes: usize,
    pub successes: usize,
    /// Fractions in [0, 1].
    pub first_try_success_rate: f64,
    pub overall_success_rate: f64,
    /// Mean adaptive rounds over successful tasks; `None` when no task
    /// succeeded.
    pub mean_adaptive_rounds_successful: Option<f64>,
    /// Per-feature statistics over successful calls, population σ.
    pub per_feature: BTreeMap<Feature, FeatureStats>,
    pub total_cost: f64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub failed_calls: usize,
}

impl Aggregate {
    pub fn from_tasks(tasks: &[TaskRecord]) -> Self {
        let n = tasks.len();
        let first = tasks.iter().filter(|t| t.first_try_success).count();
        let ok: Vec<&TaskRecord> = tasks.iter().filter(|t| t.success).collect();
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let records: Vec<UsageRecord> = tasks
            .iter()
            .flat_map(|t| &t.calls)
            .filter(|c| c.ok)
            .map(|c| UsageRecord {
                feature: c.feature,
                usage: c.usage,
                latency_ms: c.latency_ms,
                cost: c.cost,
            })
            .collect();
        let per_feature = Feature::ALL
            .into_iter()
            .filter_map(|f| FeatureStats::from_records(records.iter().filter(|r| r.feature == f)).map(|s| (f, s)))
            .collect();
        Self {
            tasks: n,
            first_try_successes: first,
            successes: ok.len(),
            first_try_success_rate: rate(first),
            overall_success_rate: rate(ok.len()),
            mean_adaptive_rounds_successful: MeanStd::of(
                &ok.iter().map(|t| t.adaptive_rounds as f64).collect::<Vec<_>>(),
            )
            .map(|m| m.mean),
            per_feature,
            total_cost: round_cost(records.iter().map(|r| r.cost).sum()),
            total_input_tokens: records.iter().map(|r| r.usage.input_tokens).sum(),
            total_output_tokens: records.iter().map(|r| r.usage.output_tokens).sum(),
            failed_calls: tasks.iter().flat_map(|t| &t.calls).filter(|c| !c.ok).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub tasks: Vec<TaskRecord>,
    pub aggregate: Aggregate,
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn ms(m: &MeanStd, prec: usize) -> String {
    format!("{:.prec$} ± {:.prec$}", m.mean, m.std)
}

impl RunReport {
    pub fn from_tasks(tasks: Vec<TaskRecord>) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            aggregate: Aggregate::from_tasks(&tasks),
            tasks,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: Self = serde_json::from_str(text).map_err(|e| EvalError::Scenario(format!("report: {e}")))?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(EvalError::Scenario(format!(
                "report format {} (expected {REPORT_FORMAT_VERSION})",
                r.format_version
            )));
        }
        Ok(r)
    }

    /// Human-readable summary: one row per task, success rates, and
    /// per-feature latency, cost and token statistics (mean ± σ).
    pub fn to_table(&self) -> String {
        let a = &self.aggregate;
        let mut out = String::new();
        let name_w = self.tasks.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<7}  {:>9}  {:>8}  {:>12}  {:>10}",
            "task", "result", "first_try", "qa", "adaptive", "cost"
        );
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<7}  {:>9}  {:>8}  {:>12}  {:>10.6}",
                t.name,
                if t.success { "success" } else { "fail" },
                if t.first_try_success { "yes" } else { "no" },
                t.qa_rounds,
                format!("{}/{}", t.adaptive_rounds, t.max_adaptive_rounds),
                t.total_cost
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "tasks                       {}", a.tasks);
        let _ = writeln!(
            out,
            "first-try success rate      {} ({}/{})",
            pct(a.first_try_success_rate),
            a.first_try_successes,
            a.tasks
        );
        let _ = writeln!(
            out,
            "overall success rate        {} ({}/{})",
            pct(a.overall_success_rate),
            a.successes,
            a.tasks
        );
        let _ = writeln!(
            out,
            "mean adaptive rounds        {}",
            a.mean_adaptive_rounds_successful
                .map(|m| format!("{m:.2} (successful tasks)"))
                .unwrap_or_else(|| "n/a".into())
        );
        let _ = writeln!(out, "failed calls                {}", a.failed_calls);
        let _ = writeln!(
            out,
            "total cost                  {:.6} ({} in / {} out tokens)",
            a.total_cost, a.total_input_tokens, a.total_output_tokens
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<20}  {:>5}  {:>20}  {:>24}  {:>18}  {:>18}",
            "feature (mean ± σ)", "calls", "latency_ms", "cost", "input_tokens", "output_tokens"
        );
        for (f, s) in &a.per_feature {
            let _ = writeln!(
                out,
                "{:<20}  {:>5}  {:>20}  {:>24}  {:>18}  {:>18}",
                f.as_str(),
                s.calls,
                ms(&s.latency_ms, 1),
                ms(&s.cost, 8),
                ms(&s.input_tokens, 1),
                ms(&s.output_tokens, 1)
            );
        }
        out
    }
}
