//! Estimators and small numerical utilities shared by the samplers.
//!
//! All reductions go through [`pairwise_sum`] over index-ordered data, which
//! makes aggregates independent of how replicas were scheduled.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Effective sample size; equals `count` for unweighted estimates.
    pub ess: f64,
    pub count: usize,
    pub seed: u64,
}

/// Ensemble statistics share the estimate layout.
pub type EnsembleStats = McEstimate;

impl McEstimate {
    pub fn exact(value: f64, seed: u64) -> Self {
        Self { value, stderr: 0.0, ess: f64::INFINITY, count: 0, seed }
    }

    /// Plain sample mean with `sd / sqrt(n)` error.
    pub fn from_samples(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { value: f64::NAN, stderr: f64::NAN, ess: 0.0, count: 0, seed };
        }
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        Self { value: mean, stderr: (var / n as f64).sqrt(), ess: n as f64, count: n, seed }
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    pub fn within(&self, target: f64, k_sigma: f64) -> bool {
        self.z_score(target) <= k_sigma
    }

    pub fn scale(self, a: f64) -> Self {
        Self { value: a * self.value, stderr: a.abs() * self.stderr, ..self }
    }

    /// Sum of two estimates treated as independent.
    pub fn add_independent(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            stderr: self.stderr.hypot(other.stderr),
            ess: self.ess.min(other.ess),
            count: self.count.max(other.count),
            seed: self.seed,
        }
    }
}

/// Deterministic pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Importance weights of an ensemble, stored relative to the largest weight.
#[derive(Debug, Clone)]
pub struct Weights {
    w: Vec<f64>,
    /// `ln` of the factor removed when rescaling.
    log_shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl Weights {
    pub fn from_log(log_w: &[f64]) -> Self {
        let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = if shift.is_finite() {
            log_w.iter().map(|&l| (l - shift).exp()).collect()
        } else {
            vec![0.0; log_w.len()]
        };
        let shift = if shift.is_finite() { shift } else { 0.0 };
        Self::with_shift(w, shift)
    }

    pub fn from_raw(w: Vec<f64>) -> Self {
        Self::with_shift(w, 0.0)
    }

    fn with_shift(w: Vec<f64>, log_shift: f64) -> Self {
        let sum = pairwise_sum(&w);
        let sq: Vec<f64> = w.iter().map(|x| x * x).collect();
        let sum_sq = pairwise_sum(&sq);
        Self { w, log_shift, sum, sum_sq }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Rescaled weights (largest equals one).
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> f64 {
        if self.sum_sq == 0.0 {
            0.0
        } else {
            self.sum * self.sum / self.sum_sq
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.sum == 0.0
    }

    /// Fraction of strictly positive weights.
    pub fn support_fraction(&self) -> f64 {
        self.w.iter().filter(|&&x| x > 0.0).count() as f64 / self.w.len().max(1) as f64
    }

    /// Unnormalized mean weight `E[w]` on the original (unshifted) scale,
    /// with its standard error.
    pub fn mean_weight(&self, seed: u64) -> McEstimate {
        let est = McEstimate::from_samples(&self.w, seed);
        let f = self.log_shift.exp();
        McEstimate { ess: self.ess(), ..est.scale(f) }
    }

    /// `ln E[w]` on the original scale; finite even when `E[w]` underflows.
    pub fn log_mean_weight(&self) -> f64 {
        self.log_shift + (self.sum / self.w.len() as f64).ln()
    }

    /// Self-normalized estimate `Σ w v / Σ w` with delta-method error.
    pub fn estimate(&self, values: &[f64], seed: u64) -> McEstimate {
        assert_eq!(values.len(), self.w.len(), "one value per weight");
        let n = self.w.len();
        if self.sum == 0.0 {
            return McEstimate { value: f64::NAN, stderr: f64::NAN, ess: 0.0, count: n, seed };
        }
        let wv: Vec<f64> = self
            .w
            .iter()
            .zip(values)
            .map(|(&w, &v)| if w == 0.0 { 0.0 } else { w * v })
            .collect();
        let value = pairwise_sum(&wv) / self.sum;
        let dev: Vec<f64> = self
            .w
            .iter()
            .zip(values)
            .map(|(&w, &v)| if w == 0.0 { 0.0 } else { (w * (v - value)).powi(2) })
            .collect();
        let stderr = pairwise_sum(&dev).sqrt() / self.sum;
        McEstimate { value, stderr, ess: self.ess(), count: n, seed }
    }
}

/// Outcome of a Kolmogorov-Smirnov comparison at the 1% level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub effective_n: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Asymptotic 1% quantile of the Kolmogorov distribution.
pub const KS_CRIT_1PCT: f64 = 1.627_6;

fn sorted_weighted(xs: &[(f64, f64)]) -> (Vec<(f64, f64)>, f64, f64) {
    let mut v: Vec<(f64, f64)> = xs.iter().copied().filter(|p| p.1 > 0.0).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let w: Vec<f64> = v.iter().map(|p| p.1).collect();
    let total = pairwise_sum(&w);
    let sq: Vec<f64> = w.iter().map(|x| x * x).collect();
    let ess = total * total / pairwise_sum(&sq);
    (v, total, ess)
}

/// One-sample KS test of weighted data against an analytic CDF.
pub fn ks_weighted_vs_cdf(samples: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> KsReport {
    let (v, total, ess) = sorted_weighted(samples);
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for &(x, w) in &v {
        let f = cdf(x);
        d = d.max((f - acc / total).abs());
        acc += w;
        d = d.max((acc / total - f).abs());
    }
    let critical = KS_CRIT_1PCT / ess.sqrt();
    KsReport { statistic: d, effective_n: ess, critical, pass: d <= critical }
}

/// Two-sample KS test between weighted ensembles.
pub fn ks_two_sample_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> KsReport {
    let (va, ta, ea) = sorted_weighted(a);
    let (vb, tb, eb) = sorted_weighted(b);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < va.len() || j < vb.len() {
        let x = match (va.get(i), vb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        while i < va.len() && va[i].0 <= x {
            fa += va[i].1;
            i += 1;
        }
        while j < vb.len() && vb[j].0 <= x {
            fb += vb[j].1;
            j += 1;
        }
        d = d.max((fa / ta - fb / tb).abs());
    }
    let n_eff = ea * eb / (ea + eb);
    let critical = KS_CRIT_1PCT / n_eff.sqrt();
    KsReport { statistic: d, effective_n: n_eff, critical, pass: d <= critical }
}

pub fn normal_cdf(x: f64, variance: f64) -> f64 {
    Normal::new(0.0, variance.sqrt()).expect("positive variance").cdf(x)
}

/// Gauss-Legendre nodes and weights on (0, 1).
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let m = m as f64;
                let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((1.0 - x) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Weighted quantile by linear scan of the sorted cumulative weights.
pub fn weighted_quantile(xs: &[(f64, f64)], q: f64) -> f64 {
    let (v, total, _) = sorted_weighted(xs);
    let target = q * total;
    let mut acc = 0.0;
    for &(x, w) in &v {
        acc += w;
        if acc >= target {
            return x;
        }
    }
    v.last().map(|p| p.0).unwrap_or(f64::NAN)
}

/// Silverman's rule-of-thumb bandwidth for weighted data.
pub fn silverman_bandwidth(xs: &[(f64, f64)]) -> f64 {
    let (v, total, ess) = sorted_weighted(xs);
    let mean = v.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
    let var = v.iter().map(|p| p.1 * (p.0 - mean).powi(2)).sum::<f64>() / total;
    let iqr = weighted_quantile(xs, 0.75) - weighted_quantile(xs, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    let spread = if spread > 0.0 { spread } else { var.sqrt() };
    0.9 * spread * ess.powf(-0.2)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let q = gauss_legendre_unit(32);
        let s: f64 = q.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-13);
        // ∫₀¹ x^k = 1/(k+1) for k < 64
        for k in [1, 5, 17, 40, 63] {
            let v: f64 = q.iter().map(|(x, w)| w * x.powi(k)).sum();
            assert_relative_eq!(v, 1.0 / (k as f64 + 1.0), max_relative = 1e-12);
        }
        let q3 = gauss_legendre_unit(3);
        assert_relative_eq!(q3[1].0, 0.5, epsilon = 1e-15);
        assert_relative_eq!(q3[1].1, 4.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn self_normalized_estimate_ignores_zero_weight_values() {
        let w = Weights::from_raw(vec![1.0, 0.0, 1.0]);
        let est = w.estimate(&[1.0, f64::INFINITY, 3.0], 0);
        assert_eq!(est.value, 2.0);
        assert_relative_eq!(w.ess(), 2.0);
        assert_relative_eq!(w.support_fraction(), 2.0 / 3.0);
    }

    #[test]
    fn log_weights_are_shifted_not_lost() {
        let w = Weights::from_log(&[-1000.0, -1000.0 + 2f64.ln()]);
        assert_relative_eq!(w.as_slice()[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(w.log_mean_weight(), -1000.0 + 1.5f64.ln(), max_relative = 1e-12);
        let v = Weights::from_log(&[-1.0, -1.0 + 2f64.ln()]).mean_weight(0);
        assert_relative_eq!(v.value, 1.5 * (-1f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn ks_statistic_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<(f64, f64)> = (0..n).map(|i| ((i as f64 + 0.5) / n as f64, 1.0)).collect();
        let r = ks_weighted_vs_cdf(&xs, |x| x.clamp(0.0, 1.0));
        assert!(r.statistic <= 0.5 / n as f64 + 1e-12);
        assert!(r.pass);
        let shifted: Vec<(f64, f64)> = xs.iter().map(|p| (p.0 + 0.2, 1.0)).collect();
        let r2 = ks_two_sample_weighted(&xs, &shifted);
        assert!((r2.statistic - 0.2).abs() < 2e-3);
        assert!(!r2.pass);
    }

    #[test]
    fn slope_of_exact_line() {
        assert_relative_eq!(ls_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), 2.0);
    }
}
