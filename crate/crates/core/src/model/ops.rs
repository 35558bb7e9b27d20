// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense kernels. f32 throughout; reductions longer than
//! [`WIDE_REDUCTION`] terms accumulate in f64.

pub const WIDE_REDUCTION: usize = 4096;

/// `a (m×k) · b (k×n)`, row-major.
pub fn matmul(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if k > WIDE_REDUCTION {
        let mut acc = vec![0f64; n];
        let mut out = vec![0f32; m * n];
        for i in 0..m {
            acc.fill(0.0);
            for kk in 0..k {
                let av = a[i * k + kk] as f64;
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in acc.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                    *o += av * bv as f64;
                }
            }
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
                *o = v as f32;
            }
        }
        return out;
    }
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `x·W + b` for `rows` input rows.
pub fn linear(x: &[f32], rows: usize, weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n = bias.len();
    let k = weight.len() / n;
    let mut out = matmul(x, rows, k, weight, n);
    for row in out.chunks_exact_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// Row-wise LayerNorm in place.
pub fn layernorm_rows(x: &mut [f32], cols: usize, gamma: &[f32], beta: &[f32], eps: f32) {
    for row in x.chunks_exact_mut(cols) {
        let (mean, var) = if cols > WIDE_REDUCTION {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / cols as f64;
            (mean as f32, var as f32)
        } else {
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            (mean, var)
        };
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

/// Numerically stable softmax in place. A row of all `-inf` becomes zeros.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn all_finite(xs: &[f32]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0f64;
                for t in 0..k {
                    s += a[i * k + t] as f64 * b[t * n + j] as f64;
                }
                out[i * n + j] = s as f32;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let a: Vec<f32> = (0..12).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..20).map(|i| (i as f32 * 0.11).cos()).collect();
        let got = matmul(&a, 3, 4, &b, 5);
        for (g, w) in got.iter().zip(naive(&a, 3, 4, &b, 5)) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn wide_matmul_uses_f64() {
        let k = WIDE_REDUCTION + 8;
        let a = vec![0.1f32; k];
        let b = vec![1.0f32; k];
        let got = matmul(&a, 1, k, &b, 1)[0];
        assert!((got as f64 - 0.1f32 as f64 * k as f64).abs() < 1e-3);
    }

    #[test]
    fn layernorm_unit_stats() {
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        layernorm_rows(&mut x, 4, &[1.0; 4], &[0.0; 4], 0.0);
        let mean: f32 = x.iter().sum::<f32>() / 4.0;
        let var: f32 = x.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = vec![1.0, 2.0, f32::NEG_INFINITY, 0.5];
        softmax_in_place(&mut r);
        assert_eq!(r[2], 0.0);
        assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let mut dead = vec![f32::NEG_INFINITY; 3];
        softmax_in_place(&mut dead);
        assert_eq!(dead, vec![0.0; 3]);
    }
}
