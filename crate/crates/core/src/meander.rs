//! Brownian meanders and the concatenated paths built from them.
//!
//! A meander is represented by a Bessel(3) path `R` (the norm of a 3-d
//! Brownian motion) together with the Imhof weight `√(π/2) / R(1)`:
//! `E[Φ(M)] = E[Φ(R) √(π/2) / R(1)]`. The weight has mean one, so weighted
//! sums are unbiased without self-normalization. Paths are sampled exactly at
//! whatever times are requested.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::BrownianPath;
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::rng::{replicate, StreamKey};
use crate::spectral::GridField;
use crate::stats::{
    ks_two_sample_weighted, ks_weighted_vs_cdf, normal_cdf, silverman_bandwidth, KsReport, McEstimate,
};

/// Piecewise-linear path observed at increasing times in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanderPath {
    times: Vec<f64>,
    values: Vec<f64>,
    weight: f64,
}

impl MeanderPath {
    /// Build from explicit nodes. `times` must start at 0, end at 1 and
    /// increase; `values[0]` must be 0.
    pub fn from_nodes(times: Vec<f64>, values: Vec<f64>, weight: f64) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Domain("need matching times and values, at least two nodes".into()));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("times must increase from 0 to 1".into()));
        }
        if values[0] != 0.0 || values.iter().any(|v| *v < 0.0) || !(weight > 0.0) {
            return Err(Error::Domain("meander values start at 0, stay nonnegative, weight positive".into()));
        }
        Ok(Self { times, values, weight })
    }

    /// The deterministic path `s ↦ slope · s` with unit weight.
    pub fn linear(slope: f64) -> Self {
        Self { times: vec![0.0, 1.0], values: vec![0.0, slope], weight: 1.0 }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn endpoint(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.values[0];
        }
        if self.times[k] == t {
            return self.values[k];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = (t - t0) / (t1 - t0);
        (1.0 - s) * self.values[k - 1] + s * self.values[k]
    }

    /// Trapezoidal integral over `[0, 1]`.
    pub fn integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
            .sum()
    }

    /// Scale all values.
    pub fn scaled(&self, a: f64) -> Self {
        Self { values: self.values.iter().map(|v| a * v).collect(), ..self.clone() }
    }
}

fn with_endpoints(times: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::with_capacity(times.len() + 2);
    t.push(0.0);
    for &s in times {
        assert!((0.0..=1.0).contains(&s), "meander time {s} outside [0, 1]");
        if s > *t.last().unwrap() {
            t.push(s);
        }
    }
    if *t.last().unwrap() < 1.0 {
        t.push(1.0);
    }
    t
}

/// Imhof-weighted meander observed at `times` (sorted, in `[0, 1]`), plus
/// the endpoints 0 and 1.
pub fn sample_meander_at<R: Rng + ?Sized>(times: &[f64], rng: &mut R) -> MeanderPath {
    let times = with_endpoints(times);
    let mut values = Vec::with_capacity(times.len());
    let mut w = [0.0f64; 3];
    values.push(0.0);
    for pair in times.windows(2) {
        let sd = (pair[1] - pair[0]).sqrt();
        for c in w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *c += sd * z;
        }
        values.push((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
    }
    let weight = FRAC_PI_2.sqrt() / values.last().unwrap();
    MeanderPath { times, values, weight }
}

/// Imhof-weighted meander on the uniform grid `k / steps`.
pub fn sample_meander<R: Rng + ?Sized>(steps: usize, rng: &mut R) -> Result<MeanderPath> {
    if steps < 2 {
        return Err(Error::Domain(format!("meander grid needs at least 2 steps, got {steps}")));
    }
    let times: Vec<f64> = (1..=steps).map(|k| k as f64 / steps as f64).collect();
    Ok(sample_meander_at(&times, rng))
}

/// Rejection sampler used as an oracle: Brownian motion from `eps` on the
/// uniform grid, kept only if the continuous path stays positive. The
/// crossing test between nodes uses the Brownian bridge hitting probability.
/// Returns `None` on rejection.
pub fn try_meander_rejection<R: Rng + ?Sized>(steps: usize, eps: f64, rng: &mut R) -> Option<MeanderPath> {
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(0.0);
    let mut x = eps;
    for k in 1..=steps {
        let z: f64 = rng.sample(StandardNormal);
        let y = x + sd * z;
        if y <= 0.0 {
            return None;
        }
        let u: f64 = rng.random();
        if u < (-2.0 * x * y / dt).exp() {
            return None;
        }
        x = y;
        times.push(k as f64 * dt);
        values.push(y);
    }
    Some(MeanderPath { times, values, weight: 1.0 })
}

/// Draw until [`try_meander_rejection`] accepts.
pub fn sample_meander_rejection<R: Rng + ?Sized>(steps: usize, eps: f64, rng: &mut R) -> MeanderPath {
    loop {
        if let Some(p) = try_meander_rejection(steps, eps, rng) {
            return p;
        }
    }
}

/// Which concatenation a path represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConcatKind {
    /// `𝒰_r` on `[0, 1]`.
    U,
    /// `𝒱_r = 𝒰_r - √r M(1)`.
    V,
    /// `𝒯_r` on `[0, 1/2]`.
    T,
}

/// Two scaled meanders glued at `r`: the first runs backwards from `r` to 0,
/// the second forwards from `r` to the end of the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatPath {
    r: f64,
    span: f64,
    kind: ConcatKind,
    shift: f64,
    left: MeanderPath,
    right: MeanderPath,
}

impl ConcatPath {
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn kind(&self) -> ConcatKind {
        self.kind
    }

    /// Length of the interval the path lives on (1, or 1/2 for `𝒯_r`).
    pub fn span(&self) -> f64 {
        self.span
    }

    /// Product of the two meander weights.
    pub fn weight(&self) -> f64 {
        self.left.weight * self.right.weight
    }

    pub fn value_at(&self, theta: f64) -> f64 {
        let r = self.r;
        let base = if theta <= r {
            r.sqrt() * self.left.value_at((r - theta) / r)
        } else {
            let l = self.span - r;
            l.sqrt() * self.right.value_at((theta - r) / l)
        };
        base + self.shift
    }

    /// Values at the `m` midpoints of `[0, span]`.
    pub fn on_grid(&self, m: usize) -> GridField {
        GridField::new((0..m).map(|j| self.value_at(self.span * (j as f64 + 0.5) / m as f64)).collect())
    }

    /// Values at the two ends of the interval.
    pub fn ends(&self) -> [f64; 2] {
        [self.value_at(0.0), self.value_at(self.span)]
    }

    /// `𝒱_r` from a `𝒰_r` path.
    pub fn to_v(&self) -> Result<Self> {
        if self.kind != ConcatKind::U {
            return Err(Error::Precondition("the shifted path is defined from a U-type path".into()));
        }
        Ok(Self { kind: ConcatKind::V, shift: -self.r.sqrt() * self.left.endpoint(), ..self.clone() })
    }
}

fn check_split(r: f64, upper: f64) -> Result<()> {
    if !(r > 0.0 && r < upper) {
        return Err(Error::Domain(format!("split point {r} outside (0, {upper})")));
    }
    Ok(())
}

/// `𝒰_r(θ) = √r M((r-θ)/r)` on `[0, r]`, `√(1-r) M̂((θ-r)/(1-r))` on `(r, 1]`.
pub fn build_u_r(r: f64, m: &MeanderPath, mhat: &MeanderPath) -> Result<ConcatPath> {
    check_split(r, 1.0)?;
    Ok(ConcatPath { r, span: 1.0, kind: ConcatKind::U, shift: 0.0, left: m.clone(), right: mhat.clone() })
}

/// `𝒱_r = -√r M(1) + 𝒰_r`.
pub fn build_v_r(u: &ConcatPath) -> Result<ConcatPath> {
    u.to_v()
}

/// Half-interval analogue of `𝒰_r` on `[0, 1/2]`.
pub fn build_t_r(r: f64, m: &MeanderPath, mhat: &MeanderPath) -> Result<ConcatPath> {
    check_split(r, 0.5)?;
    Ok(ConcatPath { r, span: 0.5, kind: ConcatKind::T, shift: 0.0, left: m.clone(), right: mhat.clone() })
}

/// Meander times needed to evaluate a concatenated path at `thetas`.
fn split_times(r: f64, span: f64, thetas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut left: Vec<f64> = thetas.iter().filter(|&&t| t <= r).map(|&t| (r - t) / r).collect();
    let mut right: Vec<f64> = thetas.iter().filter(|&&t| t > r).map(|&t| (t - r) / (span - r)).collect();
    left.sort_by(f64::total_cmp);
    right.sort_by(f64::total_cmp);
    (left, right)
}

/// Sample a concatenated path whose meanders are observed exactly at the
/// preimages of `thetas` (and at their endpoints).
pub fn sample_concat_at<R: Rng + ?Sized>(
    kind: ConcatKind,
    r: f64,
    thetas: &[f64],
    rng: &mut R,
) -> Result<ConcatPath> {
    let span = if kind == ConcatKind::T { 0.5 } else { 1.0 };
    let (lt, rt) = split_times(r, span, thetas);
    let left = sample_meander_at(&lt, rng);
    let right = sample_meander_at(&rt, rng);
    let u = if kind == ConcatKind::T { build_t_r(r, &left, &right)? } else { build_u_r(r, &left, &right)? };
    if kind == ConcatKind::V {
        u.to_v()
    } else {
        Ok(u)
    }
}

/// `𝒰_r` sampled exactly at the `m` grid midpoints.
pub fn sample_u_r_on_grid<R: Rng + ?Sized>(r: f64, m: usize, rng: &mut R) -> Result<ConcatPath> {
    let thetas: Vec<f64> = (0..m).map(|j| GridField::point(j, m)).collect();
    sample_concat_at(ConcatKind::U, r, &thetas, rng)
}

/// Standard arcsine variate `sin²(πu/2)`.
pub fn sample_arcsine<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (0.5 * PI * u).sin().powi(2)
}

/// `m(u) = ∫₀^{1/2} u dθ + u(1/2)/2` from `m` midpoint values of `u` on
/// `[0, 1/2]` and the endpoint value `u(1/2)`.
pub fn m_functional(mid: &[f64], end: f64) -> f64 {
    0.5 * mid.iter().sum::<f64>() / mid.len() as f64 + 0.5 * end
}

/// `√(12/π) exp(-12 (m(u) - c)²)`.
pub fn rho_tilde(m_value: f64, c: f64) -> f64 {
    (12.0 / PI).sqrt() * (-12.0 * (m_value - c).powi(2)).exp()
}

/// Marginal and covariance comparison of `𝒱_τ` against Brownian motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VTauReport {
    pub thetas: Vec<f64>,
    /// Weighted KS of `𝒱_τ(θ)` against `N(0, θ)`.
    pub ks_analytic: Vec<KsReport>,
    /// Two-sample KS against directly sampled Brownian values.
    pub ks_direct: Vec<KsReport>,
    /// `E[𝒱_τ(1/4) 𝒱_τ(3/4)]`, target `1/4`.
    pub covariance: McEstimate,
    pub pass: bool,
}

/// Check that `𝒱_τ` with arcsine `τ` has the marginals of `𝔅`.
pub fn v_tau_law_check(key: &StreamKey, count: usize, direct_grid: usize) -> VTauReport {
    let thetas = vec![0.25, 0.5, 1.0];
    let probe = [0.25, 0.5, 0.75, 1.0];
    let draws = replicate(&key.child("v_tau"), count, |rng, _| {
        let tau = sample_arcsine(rng);
        let v = sample_concat_at(ConcatKind::V, tau, &probe, rng).expect("arcsine variate lies in (0, 1)");
        (v.weight(), probe.map(|t| v.value_at(t)))
    });
    let direct = replicate(&key.child("direct"), count, |rng, _| {
        let b = BrownianPath::sample(direct_grid, rng);
        probe.map(|t| b.value_at(t))
    });
    let idx = |t: f64| probe.iter().position(|&p| p == t).unwrap();
    let mut ks_analytic = Vec::new();
    let mut ks_direct = Vec::new();
    for &t in &thetas {
        let k = idx(t);
        let weighted: Vec<(f64, f64)> = draws.iter().map(|(w, v)| (v[k], *w)).collect();
        let plain: Vec<(f64, f64)> = direct.iter().map(|v| (v[k], 1.0)).collect();
        ks_analytic.push(ks_weighted_vs_cdf(&weighted, |x| normal_cdf(x, t)));
        ks_direct.push(ks_two_sample_weighted(&weighted, &plain));
    }
    let prods: Vec<f64> = draws.iter().map(|(w, v)| w * v[0] * v[2]).collect();
    let covariance = McEstimate::from_samples(&prods, key.seed());
    let pass = ks_analytic.iter().chain(&ks_direct).all(|r| r.pass) && covariance.within(0.25, 4.0);
    VTauReport { thetas, ks_analytic, ks_direct, covariance, pass }
}

/// `J_r^n = E[exp(-∫ F^n(𝒰_r))]` with the integral on the `m`-point grid.
pub fn j_r_n(r: f64, spec: NonlinSpec, n: RegLevel, m: usize, key: &StreamKey, count: usize) -> Result<McEstimate> {
    check_split(r, 1.0)?;
    let vals = replicate(key, count, |rng, _| {
        let u = sample_u_r_on_grid(r, m, rng).expect("split point checked");
        u.weight() * (-spec.potential_reg(n, &u.on_grid(m))).exp()
    });
    Ok(McEstimate::from_samples(&vals, key.seed()))
}

/// Gaussian kernel.
pub fn gauss_kernel(x: f64, bandwidth: f64) -> f64 {
    (-0.5 * (x / bandwidth).powi(2)).exp() / (bandwidth * (2.0 * PI).sqrt())
}

/// Kernel estimate of `p_{Ū}(c) E[G | Ū = c]` from weighted triples
/// `(Ū, weight, G)`. A nonpositive `bandwidth` selects Silverman's rule.
/// Returns the estimate and the bandwidth used.
pub fn kde_conditional(samples: &[(f64, f64, f64)], c: f64, bandwidth: f64, seed: u64) -> (McEstimate, f64) {
    let b = if bandwidth > 0.0 {
        bandwidth
    } else {
        let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.0, s.1)).collect();
        silverman_bandwidth(&pts)
    };
    let vals: Vec<f64> = samples.iter().map(|&(u, w, g)| w * g * gauss_kernel(u - c, b)).collect();
    (McEstimate::from_samples(&vals, seed), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn meander_starts_at_zero_and_is_positive() {
        let mut rng = StreamKey::new(1).rng(0);
        for _ in 0..100 {
            let p = sample_meander(16, &mut rng).unwrap();
            assert_eq!(p.values()[0], 0.0);
            assert!(p.values()[1..].iter().all(|&v| v > 0.0));
            assert!(p.weight() > 0.0);
            assert_eq!(p.times().len(), 17);
        }
        assert!(sample_meander(1, &mut rng).is_err());
    }

    #[test]
    fn u_r_with_linear_stubs() {
        let s = MeanderPath::linear(1.0);
        let u = build_u_r(0.5, &s, &s).unwrap();
        assert_relative_eq!(u.value_at(0.0), 0.5f64.sqrt());
        assert_eq!(u.value_at(0.5), 0.0);
        assert_relative_eq!(u.value_at(1.0), 0.5f64.sqrt());
        let v = build_v_r(&u).unwrap();
        assert_eq!(v.value_at(0.0), 0.0);
        assert_relative_eq!(v.value_at(0.5), -(0.5f64.sqrt()));
        assert!(build_u_r(1.0, &s, &s).is_err());
        assert!(build_u_r(0.0, &s, &s).is_err());
        assert!(build_v_r(&v).is_err());
    }

    #[test]
    fn t_r_endpoints_and_linearity() {
        let s = MeanderPath::linear(1.0);
        let t = build_t_r(0.2, &s, &s).unwrap();
        assert_eq!(t.value_at(0.2), 0.0);
        assert_relative_eq!(t.value_at(0.5), 0.3f64.sqrt());
        let d = build_t_r(0.2, &s.scaled(2.0), &s.scaled(2.0)).unwrap();
        for th in [0.0, 0.1, 0.3, 0.45] {
            assert_relative_eq!(d.value_at(th), 2.0 * t.value_at(th));
        }
        assert!(build_t_r(0.5, &s, &s).is_err());
    }

    #[test]
    fn sampled_concat_paths() {
        let mut rng = StreamKey::new(2).rng(0);
        let u = sample_u_r_on_grid(0.3, 32, &mut rng).unwrap();
        assert_eq!(u.value_at(0.3), 0.0);
        assert!(u.on_grid(32).min() > 0.0);
        assert_relative_eq!(u.value_at(0.0), 0.3f64.sqrt() * u.left.endpoint());
        let v = u.to_v().unwrap();
        let g = v.on_grid(32);
        let shift = 0.3f64.sqrt() * u.left.endpoint();
        for (a, b) in g.values().iter().zip(u.on_grid(32).values()) {
            assert_relative_eq!(a + shift, *b, epsilon = 1e-14);
        }
        assert!(g.min() >= -shift);
    }

    #[test]
    fn m_functional_examples() {
        assert_relative_eq!(m_functional(&[1.0; 8], 1.0), 1.0);
        assert_eq!(m_functional(&[0.0; 8], 0.0), 0.0);
        let mid: Vec<f64> = (0..8).map(|j| 0.5 * (j as f64 + 0.5) / 8.0).collect();
        assert_relative_eq!(m_functional(&mid, 0.5), 0.375, epsilon = 1e-14);
    }

    #[test]
    fn arcsine_is_in_unit_interval() {
        let mut rng = StreamKey::new(3).rng(0);
        for _ in 0..1000 {
            let t = sample_arcsine(&mut rng);
            assert!((0.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn kde_of_constant_data() {
        let s = vec![(1.0, 1.0, 2.0); 10];
        let (est, b) = kde_conditional(&s, 1.0, 0.5, 0);
        assert_eq!(b, 0.5);
        assert_relative_eq!(est.value, 2.0 * gauss_kernel(0.0, 0.5));
    }
}
