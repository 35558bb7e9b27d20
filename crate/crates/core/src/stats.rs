// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error bars: standard errors, order-statistic percentile bands and
//! quadrature error propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points on the default percentile grid.
pub const CURVE_POINTS: usize = 199;

/// Sample mean and standard error of the mean (Bessel-corrected).
pub fn mean_sem(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Stats(format!("need at least 2 samples for a standard error, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    Ok((mean, sd / (n as f64).sqrt()))
}

/// `mean ± 2·sem` with two decimals.
pub fn format_bar(mean: f64, sem: f64) -> String {
    format!("{mean:.2} ± {:.2}", 2.0 * sem)
}

/// Quadrature sum `sqrt(Σ σ²)`.
pub fn propagate(sigmas: &[f64]) -> Result<f64> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Stats(format!("negative or NaN sigma {s}")));
    }
    Ok(sigmas.iter().map(|s| s * s).sum::<f64>().sqrt())
}

/// Bernoulli standard error of an accuracy `a` measured on `n` items.
pub fn accuracy_sigma(a: f64, n: usize) -> f64 {
    (a * (1.0 - a) / n as f64).sqrt()
}

/// Log-space binomial probabilities of `B(n, p)` for k = 0..=n.
fn binomial_log_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    if p <= 0.0 || p >= 1.0 {
        let hit = if p <= 0.0 { 0 } else { n };
        return (0..=n).map(|k| if k == hit { 0.0 } else { f64::NEG_INFINITY }).collect();
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut cur = n as f64 * lq;
    out.push(cur);
    for k in 0..n {
        cur += ((n - k) as f64).ln() - ((k + 1) as f64).ln() + lp - lq;
        out.push(cur);
    }
    out
}

/// Cumulative distribution of `B(n, p)` evaluated at k = 0..=n.
pub fn binomial_cdf(n: usize, p: f64) -> Vec<f64> {
    let logs = binomial_log_pmf(n, p);
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmf: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = pmf.iter().sum();
    let mut acc = 0.0;
    pmf.iter()
        .map(|x| {
            acc += x / z;
            acc
        })
        .collect()
}

/// Smallest k with `CDF(k) >= target`.
pub fn binomial_quantile(n: usize, p: f64, target: f64) -> usize {
    let cdf = binomial_cdf(n, p);
    // Guard against the last entry landing a hair under 1.0.
    cdf.iter().position(|&c| c >= target - 1e-12).unwrap_or(n)
}

/// Sorted copy; NaNs are rejected.
fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Stats("NaN sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Empirical percentile: the sorted value at 1-based rank `ceil(p n)`.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn ci_sorted(sorted: &[f64], p: f64, level: f64) -> (f64, f64) {
    let n = sorted.len();
    let tail = (1.0 - level) / 2.0;
    let k_lo = binomial_quantile(n, p, tail).clamp(1, n);
    let k_hi = binomial_quantile(n, p, 1.0 - tail).clamp(1, n);
    (sorted[k_lo - 1], sorted[k_hi - 1])
}

fn check_ci_args(n: usize, p: f64, level: f64) -> Result<()> {
    if n < 20 {
        return Err(Error::Stats(format!("percentile bands need at least 20 samples, got {n}")));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0 < level && level < 1.0) {
        return Err(Error::Stats(format!("bad percentile {p} or level {level}")));
    }
    Ok(())
}

/// Confidence band for the `p`-th percentile. The number of samples below
/// the true percentile is `B(n, p)`; its two tail quantiles give the ranks
/// of the order statistics that bound the band.
pub fn percentile_ci(samples: &[f64], p: f64, level: f64) -> Result<(f64, f64)> {
    check_ci_args(samples.len(), p, level)?;
    Ok(ci_sorted(&sorted(samples)?, p, level))
}

/// Empirical percentile of `samples` at `p`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Stats("empty sample".into()));
    }
    Ok(percentile_sorted(&sorted(samples)?, p))
}

/// Effect size against the fraction of puzzles, with a band at each point.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PercentileCurve {
    pub p: Vec<f64>,
    pub value: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n: usize,
}

/// `points` evenly spaced values strictly inside (0, 1).
pub fn percentile_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / (points + 1) as f64).collect()
}

impl PercentileCurve {
    pub fn compute(samples: &[f64], grid: &[f64], level: f64) -> Result<PercentileCurve> {
        let s = sorted(samples)?;
        let mut curve = PercentileCurve { p: grid.to_vec(), value: vec![], ci_lo: vec![], ci_hi: vec![], n: s.len() };
        for &p in grid {
            check_ci_args(s.len(), p, level)?;
            let (lo, hi) = ci_sorted(&s, p, level);
            curve.value.push(percentile_sorted(&s, p));
            curve.ci_lo.push(lo);
            curve.ci_hi.push(hi);
        }
        Ok(curve)
    }

    /// 199-point grid at 95%.
    pub fn standard(samples: &[f64]) -> Result<PercentileCurve> {
        Self::compute(samples, &percentile_grid(CURVE_POINTS), 0.95)
    }

    /// CSV with columns `p,value,lo,hi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,value,lo,hi\n");
        for i in 0..self.p.len() {
            s.push_str(&format!("{},{},{},{}\n", self.p[i], self.value[i], self.ci_lo[i], self.ci_hi[i]));
        }
        s
    }

    /// Value at the grid point nearest to `p`.
    pub fn at(&self, p: f64) -> Option<f64> {
        let i = (0..self.p.len()).min_by(|&a, &b| (self.p[a] - p).abs().total_cmp(&(self.p[b] - p).abs()))?;
        Some(self.value[i])
    }
}
