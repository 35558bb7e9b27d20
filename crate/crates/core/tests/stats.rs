// SPDX-License-Identifier: MIT OR Apache-2.0

use lookahead::stats::{
    binomial_cdf, binomial_quantile, mean_sem, percentile, percentile_ci, propagate, PercentileCurve,
};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact CDF of B(n, a/b) as ratios of big integers, rounded to f64 at the end.
fn exact_cdf(n: u32, a: u32, b: u32) -> Vec<f64> {
    let denom = BigUint::from(b).pow(n);
    let mut binom = BigUint::from(1u32);
    let mut acc = BigUint::from(0u32);
    let mut out = Vec::new();
    for k in 0..=n {
        if k > 0 {
            binom = binom * BigUint::from(n - k + 1) / BigUint::from(k);
        }
        acc += &binom * BigUint::from(a).pow(k) * BigUint::from(b - a).pow(n - k);
        // scale to 1e15 before dividing to keep precision
        let scaled = &acc * BigUint::from(10u64).pow(15) / &denom;
        out.push(scaled.to_string().parse::<f64>().unwrap() / 1e15);
    }
    out
}

fn exact_quantile(cdf: &[f64], target: f64) -> usize {
    cdf.iter().position(|&c| c >= target - 1e-12).unwrap()
}

#[test]
fn cdf_matches_big_integer_oracle() {
    for &(n, a, b) in &[(10u32, 1u32, 2u32), (100, 1, 2), (57, 3, 10), (200, 9, 10), (400, 1, 20)] {
        let exact = exact_cdf(n, a, b);
        let ours = binomial_cdf(n as usize, a as f64 / b as f64);
        for (k, (x, y)) in exact.iter().zip(&ours).enumerate() {
            assert!((x - y).abs() < 1e-10, "n={n} k={k}: {x} vs {y}");
        }
        for t in [0.025, 0.05, 0.5, 0.95, 0.975] {
            assert_eq!(binomial_quantile(n as usize, a as f64 / b as f64, t), exact_quantile(&exact, t), "n={n} t={t}");
        }
    }
}

#[test]
fn ci_of_one_to_hundred_uses_exact_ranks() {
    let samples: Vec<f64> = (1..=100).map(f64::from).collect();
    let exact = exact_cdf(100, 1, 2);
    let lo = exact_quantile(&exact, 0.025);
    let hi = exact_quantile(&exact, 0.975);
    assert_eq!(percentile_ci(&samples, 0.5, 0.95).unwrap(), (lo as f64, hi as f64));
    // B(100, 1/2): 2.5% quantile 40, 97.5% quantile 60
    assert_eq!((lo, hi), (40, 60));
}

/// Fraction of seeded trials whose 95% band contains the true `p`-quantile
/// of the uniform distribution (which is `p` itself).
fn coverage(n: usize, p: f64, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = percentile_ci(&xs, p, 0.95).unwrap();
        if lo <= p && p <= hi {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

#[test]
fn monte_carlo_coverage() {
    for &(n, p) in &[(200, 0.5), (500, 0.9), (100, 0.25), (1000, 0.05)] {
        let c = coverage(n, p, 1000, 42);
        assert!(c >= 0.93, "n={n} p={p}: coverage {c}");
    }
}

#[test]
fn curve_is_monotone_and_bracketed() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..300).map(|_| rng.random::<f64>().powi(3) * 4.0).collect();
    let c = PercentileCurve::standard(&xs).unwrap();
    assert_eq!(c.p.len(), 199);
    for i in 0..c.p.len() {
        assert!(c.ci_lo[i] <= c.value[i] && c.value[i] <= c.ci_hi[i]);
        if i > 0 {
            assert!(c.value[i - 1] <= c.value[i]);
            assert!(c.ci_lo[i - 1] <= c.ci_lo[i]);
            assert!(c.ci_hi[i - 1] <= c.ci_hi[i]);
        }
    }
    let csv = c.to_csv();
    assert!(csv.starts_with("p,value,lo,hi\n"));
    assert_eq!(csv.lines().count(), 200);
}

#[test]
fn propagate_examples() {
    assert_eq!(propagate(&[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(propagate(&[]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn band_brackets_percentile(xs in prop::collection::vec(-1e6f64..1e6, 20..200), p in 0.01f64..0.99) {
        let (lo, hi) = percentile_ci(&xs, p, 0.95).unwrap();
        let v = percentile(&xs, p).unwrap();
        prop_assert!(lo <= v && v <= hi);
    }

    #[test]
    fn mean_sem_equivariance(xs in prop::collection::vec(-100f64..100.0, 2..50), a in -5f64..5.0, b in -50f64..50.0) {
        let (m, s) = mean_sem(&xs).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let (m2, s2) = mean_sem(&ys).unwrap();
        prop_assert!((m2 - (a * m + b)).abs() < 1e-9 * (1.0 + m2.abs()));
        prop_assert!((s2 - a.abs() * s).abs() < 1e-9 * (1.0 + s2));
    }

    #[test]
    fn propagate_permutation_and_monotone(mut xs in prop::collection::vec(0f64..10.0, 1..10), i in 0usize..10, bump in 0f64..3.0) {
        let base = propagate(&xs).unwrap();
        let mut rev = xs.clone();
        rev.reverse();
        prop_assert!((propagate(&rev).unwrap() - base).abs() < 1e-12);
        let i = i % xs.len();
        xs[i] += bump;
        prop_assert!(propagate(&xs).unwrap() >= base);
    }
}
