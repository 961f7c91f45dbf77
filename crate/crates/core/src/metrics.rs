//! Aggregation of run records into per-policy and per-repeat metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};

use crate::engine::{PolicyMode, RunRecord};
use crate::error::{Error, Result};

/// Serializes a float rounded to 4 decimals.
pub(crate) fn round4<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_to4(*v))
}

pub fn round_to4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    pub n_runs: usize,
    #[serde(serialize_with = "round4")]
    pub avg_total_s: f64,
    #[serde(serialize_with = "round4")]
    pub avg_llm_calls: f64,
    /// Mean of per-run LLM time fractions.
    #[serde(serialize_with = "round4")]
    pub avg_llm_time_ratio: f64,
    /// Total LLM time over total time.
    #[serde(serialize_with = "round4")]
    pub micro_llm_time_ratio: f64,
    #[serde(serialize_with = "round4")]
    pub success_rate: f64,
    #[serde(serialize_with = "round4")]
    pub hit_rate: f64,
}

impl ScopeMetrics {
    fn from_runs(runs: &[&RunRecord]) -> Self {
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&RunRecord) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
        let total: f64 = runs.iter().map(|r| r.total_s).sum();
        let llm: f64 = runs.iter().map(|r| r.llm_time_s).sum();
        Self {
            n_runs: runs.len(),
            avg_total_s: mean(&|r| r.total_s),
            avg_llm_calls: mean(&|r| r.llm_calls as f64),
            avg_llm_time_ratio: mean(&llm_time_ratio),
            micro_llm_time_ratio: if total > 0.0 { llm / total } else { 0.0 },
            success_rate: mean(&|r| if r.success { 1.0 } else { 0.0 }),
            hit_rate: mean(&|r| if r.hit { 1.0 } else { 0.0 }),
        }
    }
}

/// Fraction of one run's time spent waiting on the planner.
pub fn llm_time_ratio(r: &RunRecord) -> f64 {
    if r.llm_calls == 0 || r.total_s <= 0.0 {
        0.0
    } else {
        r.llm_time_s / r.total_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: PolicyMode,
    pub overall: ScopeMetrics,
    /// Keyed by 1-based repeat index.
    pub by_repeat: BTreeMap<u32, ScopeMetrics>,
}

impl PolicyReport {
    pub fn hit_rate_curve(&self) -> Vec<f64> {
        self.by_repeat.values().map(|m| m.hit_rate).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policies: Vec<PolicyReport>,
}

pub const CSV_HEADER: &str = "policy,scope,n_runs,avg_total_s,avg_llm_calls,avg_llm_time_ratio,micro_llm_time_ratio,success_rate,hit_rate";

impl MetricsReport {
    pub fn policy(&self, mode: PolicyMode) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.policy == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (policy, scope), scopes `overall` then `repeat-N` ascending.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for p in &self.policies {
            let scopes = std::iter::once(("overall".to_string(), &p.overall))
                .chain(p.by_repeat.iter().map(|(k, m)| (format!("repeat-{k}"), m)));
            for (scope, m) in scopes {
                out.push_str(&format!(
                    "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                    p.policy,
                    scope,
                    m.n_runs,
                    m.avg_total_s,
                    m.avg_llm_calls,
                    m.avg_llm_time_ratio,
                    m.micro_llm_time_ratio,
                    m.success_rate,
                    m.hit_rate
                ));
            }
        }
        out
    }

    /// Fixed-width table of the overall rows.
    pub fn overall_table(&self) -> String {
        let mut out = format!(
            "{:<22}{:>7}{:>12}{:>11}{:>11}{:>10}{:>10}\n",
            "policy", "runs", "avg_total_s", "llm_calls", "llm_ratio", "success", "hit_rate"
        );
        for p in &self.policies {
            let m = &p.overall;
            out.push_str(&format!(
                "{:<22}{:>7}{:>12.4}{:>11.4}{:>11.4}{:>10.4}{:>10.4}\n",
                p.policy.as_str(),
                m.n_runs,
                m.avg_total_s,
                m.avg_llm_calls,
                m.avg_llm_time_ratio,
                m.success_rate,
                m.hit_rate
            ));
        }
        out
    }
}

pub fn aggregate(records: &[RunRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no run records to aggregate".into()));
    }
    let mut grouped: BTreeMap<PolicyMode, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.policy).or_default().push(r);
    }
    let policies = grouped
        .into_iter()
        .map(|(policy, runs)| {
            let mut repeats: BTreeMap<u32, Vec<&RunRecord>> = BTreeMap::new();
            for r in &runs {
                repeats.entry(r.repeat_index).or_default().push(r);
            }
            PolicyReport {
                policy,
                overall: ScopeMetrics::from_runs(&runs),
                by_repeat: repeats
                    .into_iter()
                    .map(|(k, rs)| (k, ScopeMetrics::from_runs(&rs)))
                    .collect(),
            }
        })
        .collect();
    Ok(MetricsReport { policies })
}

/// Hit fraction at each repeat index, ascending.
pub fn empirical_coverage(records: &[RunRecord]) -> Vec<f64> {
    let mut by_repeat: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = by_repeat.entry(r.repeat_index).or_default();
        e.0 += r.hit as usize;
        e.1 += 1;
    }
    by_repeat
        .values()
        .map(|&(hits, n)| hits as f64 / n as f64)
        .collect()
}

pub fn is_non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
}
