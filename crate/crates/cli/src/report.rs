//! Aggregation of `metrics.json` files, grouped by scenario.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::metrics::{mean, median, percentile, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    /// Scenario name, or `none` for load-only runs.
    pub scenario: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub latency_samples: usize,
    pub latency_mean: Option<f64>,
    pub latency_median: Option<f64>,
    pub latency_p95: Option<u64>,
    pub throughput_mean: f64,
    pub orphan_rate_mean: f64,
    /// Fraction of voting runs whose winner matched the ground truth.
    pub vote_accuracy: Option<f64>,
    pub successes: usize,
    /// Files whose experiment differs from the first file of the group.
    pub incompatible: Vec<String>,
}

pub fn summarize(files: &[(String, RunMetrics)]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<String, Vec<&(String, RunMetrics)>> = BTreeMap::new();
    for f in files {
        let key = f.1.scenario.clone().unwrap_or_else(|| "none".into());
        groups.entry(key).or_default().push(f);
    }
    groups
        .into_iter()
        .map(|(scenario, members)| {
            let mut pooled: Vec<u64> = members.iter().flat_map(|(_, m)| m.latency.samples.iter().copied()).collect();
            pooled.sort_unstable();
            let n = members.len() as f64;
            let votes: Vec<bool> = members
                .iter()
                .filter_map(|(_, m)| m.outcome.as_ref()?.get("correct")?.as_bool())
                .collect();
            let first = &members[0].1.experiment;
            GroupSummary {
                runs: members.len(),
                seeds: members.iter().map(|(_, m)| m.seed).collect(),
                latency_samples: pooled.len(),
                latency_mean: mean(&pooled),
                latency_median: median(&pooled),
                latency_p95: percentile(&pooled, 95),
                throughput_mean: members.iter().map(|(_, m)| m.throughput.overall).sum::<f64>() / n,
                orphan_rate_mean: members.iter().map(|(_, m)| m.orphans.rate).sum::<f64>() / n,
                vote_accuracy: (scenario == "voting" && !votes.is_empty())
                    .then(|| votes.iter().filter(|&&c| c).count() as f64 / votes.len() as f64),
                successes: members.iter().filter(|(_, m)| m.status == "success").count(),
                incompatible: members
                    .iter()
                    .filter(|(_, m)| &m.experiment != first)
                    .map(|(p, _)| p.clone())
                    .collect(),
                scenario,
            }
        })
        .collect()
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or("-".into(), |x| x.to_string())
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

pub fn render_text(groups: &[GroupSummary]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<16} {:>5} {:>8} {:>10} {:>10} {:>8} {:>10} {:>8} {:>8}",
        "scenario", "runs", "success", "lat_mean", "lat_med", "lat_p95", "tx/tick", "orphan", "vote_acc"
    )
    .unwrap();
    for g in groups {
        writeln!(
            s,
            "{:<16} {:>5} {:>8} {:>10} {:>10} {:>8} {:>10.3} {:>8.3} {:>8}",
            g.scenario,
            g.runs,
            g.successes,
            opt_f(g.latency_mean),
            opt_f(g.latency_median),
            opt(g.latency_p95),
            g.throughput_mean,
            g.orphan_rate_mean,
            opt_f(g.vote_accuracy),
        )
        .unwrap();
        for f in &g.incompatible {
            writeln!(s, "  warning: {f} was produced by a different configuration").unwrap();
        }
    }
    s
}
