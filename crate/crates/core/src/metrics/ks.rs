use serde::{Deserialize, Serialize};

use super::MetricError;

/// How the KS p-value is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsMethod {
    /// Kolmogorov limiting distribution with the small-sample λ correction.
    #[default]
    Asymptotic,
    /// Lattice-path enumeration; used when the smaller sample has at most
    /// ten values, otherwise falls back to the asymptotic form.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// sup |F_x - F_y|
    pub d: f64,
    pub p: f64,
}

const EXACT_MAX_MIN_SIZE: usize = 10;

/// Two-sided two-sample KS test with the asymptotic p-value.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult, MetricError> {
    ks_two_sample_with(x, y, KsMethod::Asymptotic)
}

pub fn ks_two_sample_with(x: &[f64], y: &[f64], method: KsMethod) -> Result<KsResult, MetricError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricError::EmptySample);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let dmax = max_scaled_gap(&xs, &ys);
    let nm = (n as f64) * (m as f64);
    let d = dmax as f64 / nm;
    let p = match method {
        KsMethod::Exact if n.min(m) <= EXACT_MAX_MIN_SIZE => exact_p(n, m, dmax),
        _ => {
            let ne = nm / (n + m) as f64;
            let sq = ne.sqrt();
            kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
        }
    };
    Ok(KsResult { d, p: p.clamp(0.0, 1.0) })
}

/// Merged sweep over both sorted samples; returns max |i·m - j·n| so that
/// D = max / (n·m) without intermediate rounding.
fn max_scaled_gap(xs: &[f64], ys: &[f64]) -> u128 {
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut best: u128 = 0;
    while i < n && j < m {
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n && xs[i] == v {
            i += 1;
        }
        while j < m && ys[j] == v {
            j += 1;
        }
        best = best.max(scaled_gap(i, j, n, m));
    }
    // once one sample is exhausted the gap only shrinks towards zero
    best.max(scaled_gap(i, j, n, m))
}

#[inline]
fn scaled_gap(i: usize, j: usize, n: usize, m: usize) -> u128 {
    let a = i as u128 * m as u128;
    let b = j as u128 * n as u128;
    a.abs_diff(b)
}

/// Q(λ) = 2 Σ (-1)^{j-1} exp(-2 j² λ²), using the theta-function form for
/// small λ where the alternating series converges slowly.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut sum = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        2.0 * sum
    }
}

/// P(D ≥ d) under H0 by counting monotone lattice paths that stay strictly
/// inside |i·m - j·n| < dmax.
fn exact_p(n: usize, m: usize, dmax: u128) -> f64 {
    // prob[j] holds P(path passes through (i, j)) for the current row i
    let mut prob = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                prob[0] = 1.0;
                continue;
            }
            if scaled_gap(i, j, n, m) >= dmax {
                prob[j] = 0.0;
                continue;
            }
            let steps_left = (n + m + 1 - i - j) as f64;
            let from_prev_row = if i > 0 { prob[j] * (n + 1 - i) as f64 / steps_left } else { 0.0 };
            let from_prev_col = if j > 0 { prob[j - 1] * (m + 1 - j) as f64 / steps_left } else { 0.0 };
            prob[j] = from_prev_row + from_prev_col;
        }
    }
    1.0 - prob[m]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    /// Brute force: evaluate both ECDFs at every sample point.
    fn brute_d(x: &[f64], y: &[f64]) -> f64 {
        let (n, m) = (x.len(), y.len());
        x.iter()
            .chain(y)
            .map(|&t| {
                let cx = x.iter().filter(|&&v| v <= t).count();
                let cy = y.iter().filter(|&&v| v <= t).count();
                (cx as i128 * m as i128 - cy as i128 * n as i128).unsigned_abs() as f64 / (n * m) as f64
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn statistic_cases() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap().d, 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]).unwrap().d, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap().d, 1.0 / 3.0);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn sweep_matches_brute_force() {
        let mut rng = rng_from(17);
        for _ in 0..200 {
            let n = rng.random_range(1..=50);
            let m = rng.random_range(1..=50);
            // coarse grid to exercise ties
            let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) * 0.5).collect();
            let y: Vec<f64> = (0..m).map(|_| (rng.random_range(0..20) as f64) * 0.5 + 0.5).collect();
            let r = ks_two_sample(&x, &y).unwrap();
            assert_eq!(r.d, brute_d(&x, &y));
            assert_eq!(r.d, ks_two_sample(&y, &x).unwrap().d);
            assert!((0.0..=1.0).contains(&r.d));
        }
    }

    #[test]
    fn p_value_behaviour() {
        let same = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.p, 1.0);
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..200).map(|i| i as f64 + 150.0).collect();
        assert!(ks_two_sample(&x, &y).unwrap().p < 1e-10);
        // Kolmogorov distribution at λ = 1.36 is ≈ 0.05
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        // both branches agree at the switch point
        assert!((kolmogorov_q(1.1799999) - kolmogorov_q(1.18)).abs() < 1e-6);
    }

    #[test]
    fn exact_p_small_cases() {
        // n = m = 2, disjoint: only 2 of C(4,2) = 6 paths reach |gap| = 1
        let r = ks_two_sample_with(&[0.0, 1.0], &[2.0, 3.0], KsMethod::Exact).unwrap();
        assert!((r.p - 2.0 / 6.0).abs() < 1e-12);
        // identical samples: every path has D ≥ 0
        let r = ks_two_sample_with(&[1.0, 2.0], &[1.0, 2.0], KsMethod::Exact).unwrap();
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_p_matches_enumeration() {
        // enumerate every interleaving of n x's and m y's
        fn enumerate(n: usize, m: usize, d: f64) -> f64 {
            let total = n + m;
            let mut hits = 0u64;
            let mut count = 0u64;
            for mask in 0u32..(1 << total) {
                if mask.count_ones() as usize != n {
                    continue;
                }
                count += 1;
                let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
                for b in 0..total {
                    if mask >> b & 1 == 1 { i += 1 } else { j += 1 }
                    best = best.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
                }
                if best >= d - 1e-12 {
                    hits += 1;
                }
            }
            hits as f64 / count as f64
        }
        let x = [0.1, 0.5, 0.9, 1.3];
        let y = [0.2, 0.3, 1.0, 1.1, 1.2];
        let r = ks_two_sample_with(&x, &y, KsMethod::Exact).unwrap();
        assert!((r.p - enumerate(4, 5, r.d)).abs() < 1e-12);
    }
}
