//! Sampling of the Gaussian reference measure `μ_c` and of the Gibbs
//! measures `ν_c^n` and `ν_c` by importance weighting.
//!
//! A draw from `μ_c` is `Y = B - B̄ + c` for a Brownian motion `B` sampled at
//! `θ = 0`, at the midpoints `(j + ½)/M` and at `θ = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::rng::{replicate, StreamKey};
use crate::spectral::{GridField, SpectralField, Transform};
use crate::stats::{pairwise_sum, McEstimate, Weights};

/// Ensembles with fewer effective samples than this are flagged.
pub const DEGENERATE_ESS: f64 = 10.0;

/// Brownian motion from 0 observed at `0`, the `M` grid midpoints and `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    values: Vec<f64>,
}

impl BrownianPath {
    pub fn sample<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        assert!(m >= 1, "grid needs at least one point");
        let mut values = Vec::with_capacity(m + 2);
        let half = (0.5 / m as f64).sqrt();
        let full = (1.0 / m as f64).sqrt();
        let mut b = 0.0;
        values.push(b);
        for j in 0..=m {
            let z: f64 = rng.sample(StandardNormal);
            b += z * if j == 0 || j == m { half } else { full };
            values.push(b);
        }
        Self { values }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len() - 2
    }

    /// Values at the grid midpoints.
    pub fn midpoints(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn end(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    /// Midpoint-rule mean `B̄`.
    pub fn mean(&self) -> f64 {
        pairwise_sum(self.midpoints()) / self.grid_size() as f64
    }

    /// Value at `θ`, exact at the nodes and linear in between.
    pub fn value_at(&self, theta: f64) -> f64 {
        let m = self.grid_size() as f64;
        let x = theta * m - 0.5;
        if x <= 0.0 {
            let s = (theta * 2.0 * m).clamp(0.0, 1.0);
            return (1.0 - s) * self.values[0] + s * self.values[1];
        }
        if x >= m - 1.0 {
            let s = ((theta - (m - 0.5) / m) * 2.0 * m).clamp(0.0, 1.0);
            let n = self.values.len();
            return (1.0 - s) * self.values[n - 2] + s * self.values[n - 1];
        }
        let j = x.floor() as usize;
        let s = x - j as f64;
        (1.0 - s) * self.values[j + 1] + s * self.values[j + 2]
    }
}

/// Probability that the Brownian interpolation of the node values
/// `(0, θ_0, …, θ_{M-1}, 1)` stays positive. Nonpositive nodes give zero.
pub fn bridge_positivity(ends: [f64; 2], mid: &[f64]) -> f64 {
    log_bridge_positivity(ends, mid).exp()
}

/// Logarithm of [`bridge_positivity`].
pub fn log_bridge_positivity(ends: [f64; 2], mid: &[f64]) -> f64 {
    let m = mid.len() as f64;
    let seg = |a: f64, b: f64, dt: f64| -> f64 {
        if a <= 0.0 || b <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (-(-2.0 * a * b / dt).exp()).ln_1p()
        }
    };
    let mut acc = seg(ends[0], mid[0], 0.5 / m);
    for w in mid.windows(2) {
        acc += seg(w[0], w[1], 1.0 / m);
        if acc == f64::NEG_INFINITY {
            return acc;
        }
    }
    acc + seg(mid[mid.len() - 1], ends[1], 0.5 / m)
}

/// How membership in the positive cone `K` is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KMonitor {
    /// Indicator of nonnegative grid values.
    #[default]
    Grid,
    /// Conditional probability that the path between grid points stays
    /// positive, given its grid values.
    Bridge,
}

/// One field from `μ_c` with its importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub field: GridField,
    pub coeffs: SpectralField,
    /// Field values at `θ = 0` and `θ = 1`.
    pub ends: [f64; 2],
    /// `-∞` encodes weight zero.
    pub log_weight: f64,
}

impl WeightedSample {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// Conditional probability that the underlying path lies in `K`.
    pub fn k_probability(&self, monitor: KMonitor) -> f64 {
        match monitor {
            KMonitor::Grid => {
                if self.field.min() >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KMonitor::Bridge => bridge_positivity(self.ends, self.field.values()),
        }
    }
}

/// A weighted ensemble with estimators.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub samples: Vec<WeightedSample>,
    pub weights: Weights,
    pub seed: u64,
}

impl Ensemble {
    fn new(samples: Vec<WeightedSample>, seed: u64) -> Self {
        let lw: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
        Self { weights: Weights::from_log(&lw), samples, seed }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ess(&self) -> f64 {
        self.weights.ess()
    }

    pub fn is_degenerate(&self) -> bool {
        self.weights.ess() < DEGENERATE_ESS
    }

    /// Self-normalized expectation of `phi`.
    pub fn expect(&self, phi: impl Fn(&WeightedSample) -> f64) -> McEstimate {
        let v: Vec<f64> = self.samples.iter().map(phi).collect();
        self.weights.estimate(&v, self.seed)
    }

    /// Reweight the ensemble by `exp(delta(sample))`.
    pub fn reweighted(&self, delta: impl Fn(&WeightedSample) -> f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| WeightedSample { log_weight: s.log_weight + delta(s), ..s.clone() })
            .collect();
        Self::new(samples, self.seed)
    }
}

/// Draws from `μ_c` at a fixed resolution.
///
/// In projected mode each field is replaced by its `N`-mode truncation
/// evaluated on the grid, which is the reference measure of the Galerkin
/// system integrated by [`crate::dynamics::Integrator`].
#[derive(Debug, Clone)]
pub struct PathSampler {
    c: f64,
    transform: Transform,
    projected: bool,
}

impl PathSampler {
    pub fn new(c: f64, modes: usize, grid: usize) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("mean level must be finite, got {c}")));
        }
        Ok(Self { c, transform: Transform::new(modes, grid)?, projected: false })
    }

    pub fn projected(mut self) -> Self {
        self.projected = true;
        self
    }

    pub fn mean_level(&self) -> f64 {
        self.c
    }

    pub fn modes(&self) -> usize {
        self.transform.modes()
    }

    pub fn grid(&self) -> usize {
        self.transform.grid()
    }

    /// A `μ_c` sample together with the Brownian path it came from.
    pub fn draw_with_path<R: Rng + ?Sized>(&self, rng: &mut R) -> (WeightedSample, BrownianPath) {
        let m = self.grid();
        let path = BrownianPath::sample(m, rng);
        let shift = self.c - path.mean();
        let mut field = GridField::new(path.midpoints().iter().map(|b| b + shift).collect());
        let mut coeffs = self.transform.to_spectral(&field).expect("grid size matches");
        // Exact mean despite rounding in the transform.
        coeffs.coeffs_mut()[0] = self.c;
        if self.projected {
            field = self.transform.to_grid(&coeffs).expect("mode count matches");
        }
        let ends = [shift, path.end() + shift];
        (WeightedSample { field, coeffs, ends, log_weight: 0.0 }, path)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightedSample {
        self.draw_with_path(rng).0
    }

    /// `count` independent draws from `μ_c` with unit weights.
    pub fn sample_mu_c(&self, key: &StreamKey, count: usize) -> Ensemble {
        Ensemble::new(replicate(key, count, |rng, _| self.draw(rng)), key.seed())
    }

    /// Importance ensemble for `ν_c^n`: weights `exp(-U^n)`.
    pub fn sample_nu_reg(&self, spec: NonlinSpec, n: RegLevel, key: &StreamKey, count: usize) -> Result<Ensemble> {
        check_count(count)?;
        Ok(self.sample_mu_c(key, count).reweighted(|s| -spec.potential_reg(n, &s.field)))
    }

    /// Importance ensemble for `ν_c`: weights `exp(-U) 1_K`.
    pub fn sample_nu_limit(&self, spec: NonlinSpec, monitor: KMonitor, key: &StreamKey, count: usize) -> Result<Ensemble> {
        check_count(count)?;
        if self.c <= 0.0 {
            return Err(Error::Precondition(format!("the limit measure needs c > 0, got {}", self.c)));
        }
        Ok(self.sample_mu_c(key, count).reweighted(|s| limit_log_weight(spec, monitor, s)))
    }

    /// `Z_c^n = E_{μ_c}[exp(-U^n)]`.
    pub fn estimate_z(&self, spec: NonlinSpec, n: RegLevel, key: &StreamKey, count: usize) -> Result<McEstimate> {
        let ens = self.sample_nu_reg(spec, n, key, count)?;
        Ok(ens.weights.mean_weight(key.seed()))
    }

    /// Independence Metropolis with `μ_c` proposals targeting `ν_c^n`.
    /// Returns the mean of `phi` over `chains` chains of `length` steps
    /// (first `burn_in` discarded); the error is the spread of chain means.
    pub fn metropolis_nu_reg(
        &self,
        spec: NonlinSpec,
        n: RegLevel,
        key: &StreamKey,
        chains: usize,
        length: usize,
        burn_in: usize,
        phi: impl Fn(&WeightedSample) -> f64 + Sync,
    ) -> McEstimate {
        assert!(length > burn_in, "chain must be longer than its burn-in");
        let means = replicate(key, chains, |rng, _| {
            let mut cur = self.draw(rng);
            let mut cur_lw = -spec.potential_reg(n, &cur.field);
            let mut cur_phi = phi(&cur);
            let mut acc = Vec::with_capacity(length - burn_in);
            for k in 0..length {
                let prop = self.draw(rng);
                let lw = -spec.potential_reg(n, &prop.field);
                let u: f64 = rng.random();
                if u.ln() < lw - cur_lw {
                    cur = prop;
                    cur_lw = lw;
                    cur_phi = phi(&cur);
                }
                if k >= burn_in {
                    acc.push(cur_phi);
                }
            }
            pairwise_sum(&acc) / acc.len() as f64
        });
        McEstimate::from_samples(&means, key.seed())
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::Precondition("ensemble size must be at least 1".into()));
    }
    Ok(())
}

/// `ln(exp(-U(x)) P(x ∈ K | grid values))`.
pub fn limit_log_weight(spec: NonlinSpec, monitor: KMonitor, s: &WeightedSample) -> f64 {
    if s.field.min() < 0.0 {
        return f64::NEG_INFINITY;
    }
    let u = spec.potential(&s.field);
    if !u.is_finite() {
        return f64::NEG_INFINITY;
    }
    match monitor {
        KMonitor::Grid => -u,
        KMonitor::Bridge => -u + log_bridge_positivity(s.ends, s.field.values()),
    }
}

/// Direct `μ_c` draw on `M` midpoints.
pub fn sample_mu_c<R: Rng + ?Sized>(c: f64, m: usize, rng: &mut R) -> GridField {
    let path = BrownianPath::sample(m, rng);
    let shift = c - path.mean();
    GridField::new(path.midpoints().iter().map(|b| b + shift).collect())
}

/// A named functional on weighted samples.
pub struct Functional<'a> {
    pub name: String,
    pub f: Box<dyn Fn(&WeightedSample) -> f64 + Sync + Send + 'a>,
}

impl<'a> Functional<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(&WeightedSample) -> f64 + Sync + Send + 'a) -> Self {
        Self { name: name.into(), f: Box::new(f) }
    }
}

/// One row of a weak-convergence table. `n = None` is the limit measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: Option<u32>,
    pub functional: String,
    pub estimate: f64,
    pub stderr: f64,
    pub ess: f64,
    pub seed: u64,
}

/// `E_{ν^n}[φ]` for each `n` and `E_ν[φ]`, all from one set of `μ_c` draws.
pub fn weak_convergence_scan(
    sampler: &PathSampler,
    spec: NonlinSpec,
    functionals: &[Functional<'_>],
    n_grid: &[RegLevel],
    monitor: KMonitor,
    key: &StreamKey,
    count: usize,
) -> Result<Vec<ScanRow>> {
    check_count(count)?;
    let base = sampler.sample_mu_c(key, count);
    let mut rows = Vec::new();
    let mut push = |n: Option<u32>, ens: &Ensemble| {
        for phi in functionals {
            let est = ens.expect(|s| (phi.f)(s));
            rows.push(ScanRow {
                n,
                functional: phi.name.clone(),
                estimate: est.value,
                stderr: est.stderr,
                ess: est.ess,
                seed: key.seed(),
            });
        }
    };
    for &n in n_grid {
        push(Some(n.get()), &base.reweighted(|s| -spec.potential_reg(n, &s.field)));
    }
    if sampler.mean_level() > 0.0 {
        push(None, &base.reweighted(|s| limit_log_weight(spec, monitor, s)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sample_means_are_exact() {
        let s = PathSampler::new(2.0, 16, 32).unwrap();
        let ens = s.sample_mu_c(&StreamKey::new(1), 50);
        for x in &ens.samples {
            assert_relative_eq!(x.field.mean(), 2.0, epsilon = 1e-12);
            assert_eq!(x.coeffs.coeffs()[0], 2.0);
        }
        let p = s.clone().projected();
        let x = p.draw(&mut StreamKey::new(2).rng(0));
        assert_relative_eq!(x.field.mean(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn path_interpolation_hits_nodes() {
        let b = BrownianPath::sample(8, &mut StreamKey::new(3).rng(0));
        assert_eq!(b.value_at(0.0), 0.0);
        assert_relative_eq!(b.value_at(1.0), b.end());
        assert_relative_eq!(b.value_at(2.5 / 8.0), b.midpoints()[2], epsilon = 1e-14);
    }

    #[test]
    fn negative_grid_value_has_zero_limit_weight() {
        let mut s = PathSampler::new(0.1, 8, 16).unwrap().draw(&mut StreamKey::new(4).rng(0));
        s.field.values_mut()[3] = -0.01;
        assert_eq!(limit_log_weight(NonlinSpec::Log, KMonitor::Grid, &s), f64::NEG_INFINITY);
        assert_eq!(s.k_probability(KMonitor::Grid), 0.0);
        assert_eq!(s.k_probability(KMonitor::Bridge), 0.0);
    }

    #[test]
    fn bridge_positivity_of_a_high_constant_is_one() {
        assert_relative_eq!(bridge_positivity([5.0, 5.0], &[5.0; 16]), 1.0);
        assert!(bridge_positivity([0.01, 0.01], &[0.01; 16]) < 0.1);
    }

    #[test]
    fn single_mode_partition_function_is_exact() {
        let s = PathSampler::new(2.0, 1, 8).unwrap().projected();
        let n = RegLevel::new(4).unwrap();
        let z = s.estimate_z(NonlinSpec::Log, n, &StreamKey::new(5), 20).unwrap();
        assert_relative_eq!(z.value, (-NonlinSpec::Log.antiderivative_reg(n, 2.0)).exp(), max_relative = 1e-12);
        let ens = s.sample_nu_reg(NonlinSpec::Log, n, &StreamKey::new(5), 20).unwrap();
        assert_relative_eq!(ens.ess(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_count_is_rejected() {
        let s = PathSampler::new(2.0, 4, 8).unwrap();
        assert!(s.sample_nu_reg(NonlinSpec::Log, RegLevel::new(1).unwrap(), &StreamKey::new(0), 0).is_err());
        assert!(PathSampler::new(-1.0, 4, 8)
            .unwrap()
            .sample_nu_limit(NonlinSpec::Log, KMonitor::Grid, &StreamKey::new(0), 5)
            .is_err());
    }
}
