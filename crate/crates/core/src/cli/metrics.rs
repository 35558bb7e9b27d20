// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-puzzle scalar metrics and their aggregation. Every experiment
//! writes `metrics.jsonl`; summaries and subsplit reports are built from it.

use std::collections::BTreeMap;

use lookahead::puzzles::{PuzzleRecord, Subsplit};
use lookahead::stats::{mean_sem, PercentileCurve};
use lookahead::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Metric {
    pub puzzle_id: String,
    pub subsplit: Subsplit,
    pub metric: String,
    pub value: f64,
}

impl Metric {
    pub fn new(p: &PuzzleRecord, metric: impl Into<String>, value: f64) -> Metric {
        Metric { puzzle_id: p.id.clone(), subsplit: p.subsplit, metric: metric.into(), value }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub subsplit: String,
    pub n: usize,
    /// Empty without samples.
    pub mean: Option<f64>,
    /// Empty below two samples.
    pub sem: Option<f64>,
}

/// Metric names in order of first appearance with their values.
fn group<'a>(metrics: impl Iterator<Item = &'a Metric>) -> Vec<(String, Vec<f64>)> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in metrics {
        let e = by.entry(m.metric.as_str()).or_default();
        if e.is_empty() {
            order.push(m.metric.clone());
        }
        e.push(m.value);
    }
    order.into_iter().map(|k| { let v = by.remove(k.as_str()).unwrap_or_default(); (k, v) }).collect()
}

fn row(metric: String, subsplit: &str, values: &[f64]) -> SummaryRow {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let sem = mean_sem(values).ok().map(|(_, s)| s);
    SummaryRow { metric, subsplit: subsplit.into(), n, mean, sem }
}

/// Mean and standard error per metric over all puzzles.
pub fn summarize(metrics: &[Metric]) -> Vec<SummaryRow> {
    group(metrics.iter()).into_iter().map(|(k, v)| row(k, "all", &v)).collect()
}

/// The same, split by subsplit as well.
pub fn summarize_by_subsplit(metrics: &[Metric]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (k, v) in group(metrics.iter()) {
        out.push(row(k.clone(), "all", &v));
        for s in [Subsplit::SameTarget, Subsplit::DifferentTarget] {
            let vals: Vec<f64> = metrics.iter().filter(|m| m.metric == k && m.subsplit == s).map(|m| m.value).collect();
            out.push(row(k.clone(), s.name(), &vals));
        }
    }
    out
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CurveRow {
    pub series: String,
    pub p: f64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile curves for the listed metrics; series with fewer than 20
/// samples are left out with a warning.
pub fn curves(metrics: &[Metric], series: &[&str]) -> Result<Vec<CurveRow>> {
    let mut out = Vec::new();
    for name in series {
        let v: Vec<f64> = metrics.iter().filter(|m| m.metric == *name).map(|m| m.value).collect();
        if v.len() < 20 {
            log::warn!("{name}: {} samples, too few for a percentile curve", v.len());
            continue;
        }
        let c = PercentileCurve::standard(&v)?;
        for i in 0..c.p.len() {
            out.push(CurveRow { series: name.to_string(), p: c.p[i], value: c.value[i], lo: c.ci_lo[i], hi: c.ci_hi[i] });
        }
    }
    Ok(out)
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Skipped {
    pub puzzle_id: String,
    pub reason: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(id: &str, s: Subsplit, k: &str, v: f64) -> Metric {
        Metric { puzzle_id: id.into(), subsplit: s, metric: k.into(), value: v }
    }

    #[test]
    fn subsplit_counts_add_up() {
        let ms = vec![
            m("a", Subsplit::SameTarget, "x", 1.0),
            m("b", Subsplit::DifferentTarget, "x", 3.0),
            m("c", Subsplit::SameTarget, "x", 2.0),
            m("a", Subsplit::SameTarget, "y", 0.0),
        ];
        let rows = summarize_by_subsplit(&ms);
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].metric.as_str(), rows[0].n, rows[0].mean), ("x", 3, Some(2.0)));
        assert_eq!(rows[1].n + rows[2].n, rows[0].n);
        assert_eq!(rows[1].mean, Some(1.5));
        assert_eq!(rows[3].sem, None);
    }
}
