//! Two-sided Monte Carlo checks of the integration-by-parts formulas and of
//! the generator of the regularized dynamics.
//!
//! Test functionals act on the spectral coefficients of a field. Inner
//! products are `L²` products of coefficient vectors; grid quadratures use
//! the midpoint rule, which for band-limited directions agrees with the
//! coefficient product to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Integrator, SimConfig};
use crate::error::{Error, Result};
use crate::meander::{kde_conditional, sample_u_r_on_grid};
use crate::measures::{bridge_positivity, Ensemble, PathSampler, WeightedSample};
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::rng::{replicate, StreamKey};
use crate::spectral::{eigenvalue, neg_eigenvalue, GridField, SpectralField, Transform};
use crate::stats::{gauss_legendre_unit, ls_slope, McEstimate, Weights};

/// Discrepancies up to this many combined standard errors close an identity.
pub const CLOSE_SIGMA: f64 = 3.0;

fn dot(a: &SpectralField, b: &SpectralField) -> f64 {
    a.inner_l2(b)
}

/// Bounded test functionals with known derivatives.
#[derive(Clone)]
pub enum TestFunctional {
    Const(f64),
    /// `cos⟨x, k⟩`.
    CosInner(SpectralField),
    /// `sin⟨x, k⟩`.
    SinInner(SpectralField),
    /// `exp(-‖x‖²)`.
    ExpNegSq,
    Custom { name: String, f: Arc<dyn Fn(&SpectralField) -> f64 + Send + Sync> },
}

impl std::fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

fn direction_label(k: &SpectralField) -> String {
    let nz: Vec<String> = k
        .coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| if *c == 1.0 { format!("e{i}") } else { format!("{c}e{i}") })
        .collect();
    if nz.is_empty() {
        "0".into()
    } else {
        nz.join("+")
    }
}

impl TestFunctional {
    pub fn label(&self) -> String {
        match self {
            Self::Const(c) => format!("const({c})"),
            Self::CosInner(k) => format!("cos<x,{}>", direction_label(k)),
            Self::SinInner(k) => format!("sin<x,{}>", direction_label(k)),
            Self::ExpNegSq => "exp(-|x|^2)".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, x: &SpectralField) -> f64 {
        match self {
            Self::Const(c) => *c,
            Self::CosInner(k) => dot(x, k).cos(),
            Self::SinInner(k) => dot(x, k).sin(),
            Self::ExpNegSq => (-dot(x, x)).exp(),
            Self::Custom { f, .. } => f(x),
        }
    }

    /// `L²` gradient for the cylinder kinds.
    pub fn gradient(&self, x: &SpectralField) -> Option<SpectralField> {
        let mut g = match self {
            Self::Const(_) => return Some(SpectralField::zeros(x.modes())),
            Self::CosInner(k) | Self::SinInner(k) => k.clone(),
            Self::ExpNegSq => x.clone(),
            Self::Custom { .. } => return None,
        };
        let a = match self {
            Self::CosInner(k) => -dot(x, k).sin(),
            Self::SinInner(k) => dot(x, k).cos(),
            Self::ExpNegSq => -2.0 * self.eval(x),
            _ => unreachable!(),
        };
        g.coeffs_mut().iter_mut().for_each(|c| *c *= a);
        Some(g)
    }

    /// `½ Tr((-A) ∇²φ(x))` for the cylinder kinds.
    fn half_trace(&self, x: &SpectralField) -> Option<f64> {
        let k = match self {
            Self::Const(_) => return Some(0.0),
            Self::CosInner(k) | Self::SinInner(k) => k,
            _ => return None,
        };
        let s = dot(x, k);
        let second = match self {
            Self::CosInner(_) => -s.cos(),
            _ => -s.sin(),
        };
        Some(0.5 * second * k.norm_gamma(1.0).seminorm.powi(2))
    }
}

/// `∂_h Φ(x)`: analytic for the built-in kinds, central differences otherwise.
pub fn directional_derivative(phi: &TestFunctional, x: &SpectralField, h: &SpectralField) -> f64 {
    if let Some(g) = phi.gradient(x) {
        return dot(&g, h);
    }
    let norm = dot(h, h).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let step = 1e-5 / norm;
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp.axpy(step, h);
    xm.axpy(-step, h);
    (phi.eval(&xp) - phi.eval(&xm)) / (2.0 * step)
}

/// `⟨x, A h⟩` over the modes both fields carry.
pub fn inner_ah(x: &SpectralField, h: &SpectralField) -> f64 {
    x.coeffs().iter().zip(h.coeffs()).enumerate().map(|(i, (a, b))| eigenvalue(i) * a * b).sum()
}

/// Midpoint quadrature of `g(x(θ)) k(θ)`.
pub fn grid_pairing(x: &GridField, k: &GridField, g: impl Fn(f64) -> f64) -> f64 {
    let s: f64 = x.values().iter().zip(k.values()).map(|(&a, &b)| g(a) * b).sum();
    s / x.len() as f64
}

/// Both sides of an integration-by-parts identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpReport {
    pub label: String,
    pub lhs: McEstimate,
    pub rhs_bulk: McEstimate,
    pub rhs_boundary: McEstimate,
    pub discrepancy: f64,
    pub sigma_combined: f64,
    pub pass: bool,
    /// Kernel bandwidth used for conditioning, when any.
    pub bandwidth: Option<f64>,
    /// Change of the boundary term when the bandwidth is halved.
    pub bandwidth_sensitivity: Option<f64>,
    /// Smallest kernel-weighted effective sample size over the nodes.
    pub conditioning_ess: Option<f64>,
    pub quadrature_nodes: usize,
    /// Mass of the ensemble on `K`, when relevant.
    pub k_fraction: Option<f64>,
    pub ess: f64,
}

impl IbpReport {
    fn new(label: String, lhs: McEstimate, rhs_bulk: McEstimate, rhs_boundary: McEstimate) -> Self {
        let discrepancy = (lhs.value - (rhs_bulk.value + rhs_boundary.value)).abs();
        let sigma_combined = (lhs.stderr.powi(2) + rhs_bulk.stderr.powi(2) + rhs_boundary.stderr.powi(2)).sqrt();
        let pass = discrepancy <= CLOSE_SIGMA * sigma_combined || discrepancy == 0.0;
        Self {
            label,
            lhs,
            rhs_bulk,
            rhs_boundary,
            discrepancy,
            sigma_combined,
            pass,
            bandwidth: None,
            bandwidth_sensitivity: None,
            conditioning_ess: None,
            quadrature_nodes: 0,
            k_fraction: None,
            ess: lhs.ess,
        }
    }

    /// Discrepancy in units of the combined standard error.
    pub fn z(&self) -> f64 {
        if self.discrepancy == 0.0 {
            0.0
        } else {
            self.discrepancy / self.sigma_combined
        }
    }
}

/// Monte Carlo sizes for the meander boundary terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Gauss nodes in the arcsine variable.
    pub nodes: usize,
    pub samples_per_node: usize,
    /// Kernel bandwidth; nonpositive selects Silverman's rule per node.
    pub bandwidth: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { nodes: 32, samples_per_node: 4096, bandwidth: 0.0 }
    }
}

/// `𝒰_r` draws at the arcsine-mapped Gauss nodes `r_k = sin²(πu_k/2)`.
/// For each node, `g` maps (grid values, coefficients, `Ū_r`) to a value;
/// results are Imhof-weighted.
struct NodeDraws {
    r: f64,
    weight: f64,
    /// `(Ū_r, Imhof weight, values)` per sample.
    draws: Vec<(f64, f64, Vec<f64>)>,
}

fn meander_nodes(
    cfg: &BoundaryConfig,
    transform: &Transform,
    key: &StreamKey,
    g: impl Fn(&GridField, &SpectralField) -> Vec<f64> + Sync,
) -> Vec<NodeDraws> {
    let m = transform.grid();
    gauss_legendre_unit(cfg.nodes)
        .into_iter()
        .enumerate()
        .map(|(k, (u, w))| {
            let r = (0.5 * PI * u).sin().powi(2);
            let draws = replicate(&key.child_index(k as u64), cfg.samples_per_node, |rng, _| {
                let path = sample_u_r_on_grid(r, m, rng).expect("Gauss nodes lie inside (0, 1)");
                let grid = path.on_grid(m);
                let coeffs = transform.to_spectral(&grid).expect("grid size matches");
                (grid.mean(), path.weight(), g(&grid, &coeffs))
            });
            NodeDraws { r, weight: w, draws }
        })
        .collect()
}

struct Boundary {
    estimate: McEstimate,
    bandwidth: Option<f64>,
    sensitivity: Option<f64>,
    conditioning_ess: Option<f64>,
}

/// `-Σ_k w_k h(r_k) E[weight · value_k]` with independent node errors.
fn boundary_plain(nodes: &[NodeDraws], h: &SpectralField, seed: u64, scale: f64) -> Boundary {
    let (mut value, mut var) = (0.0, 0.0);
    let mut count = 0;
    for node in nodes {
        let vals: Vec<f64> = node.draws.iter().map(|(_, w, v)| w * v[0]).collect();
        let est = McEstimate::from_samples(&vals, seed);
        let a = node.weight * h.eval(node.r) * scale;
        value -= a * est.value;
        var += (a * est.stderr).powi(2);
        count += vals.len();
    }
    let estimate = McEstimate { value, stderr: var.sqrt(), ess: count as f64, count, seed };
    Boundary { estimate, bandwidth: None, sensitivity: None, conditioning_ess: None }
}

/// `-Σ_k w_k h(r_k) p(c) E[value | Ū_r = c] · scale` with kernel conditioning.
fn boundary_kde(nodes: &[NodeDraws], h: &SpectralField, c: f64, bandwidth: f64, seed: u64, scale: f64) -> Boundary {
    let run = |bw_factor: f64| {
        let (mut value, mut var) = (0.0, 0.0);
        let mut bws = Vec::new();
        let mut min_ess = f64::INFINITY;
        for node in nodes {
            let triples: Vec<(f64, f64, f64)> = node.draws.iter().map(|(u, w, v)| (*u, *w, v[0])).collect();
            let pts: Vec<(f64, f64, f64)> = triples.iter().map(|t| (t.0, t.1, 1.0)).collect();
            let b = if bandwidth > 0.0 { bandwidth } else { kde_conditional(&pts, c, 0.0, seed).1 };
            let b = b * bw_factor;
            let (est, _) = kde_conditional(&triples, c, b, seed);
            let kw: Vec<f64> = triples.iter().map(|t| t.1 * crate::meander::gauss_kernel(t.0 - c, b)).collect();
            min_ess = min_ess.min(Weights::from_raw(kw).ess());
            let a = node.weight * h.eval(node.r) * scale;
            value -= a * est.value;
            var += (a * est.stderr).powi(2);
            bws.push(b);
        }
        (value, var.sqrt(), bws.iter().sum::<f64>() / bws.len() as f64, min_ess)
    };
    let (value, stderr, bw, ess) = run(1.0);
    let (half, _, _, _) = run(0.5);
    let count = nodes.iter().map(|n| n.draws.len()).sum();
    Boundary {
        estimate: McEstimate { value, stderr, ess, count, seed },
        bandwidth: Some(bw),
        sensitivity: Some((half - value).abs()),
        conditioning_ess: Some(ess),
    }
}

/// Resolution of the fields used by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub modes: usize,
    pub grid: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { modes: 64, grid: 128 }
    }
}

fn check_direction(h: &SpectralField, res: &Resolution) -> Result<()> {
    if h.modes() > res.modes {
        return Err(Error::Precondition(format!(
            "direction has {} modes, resolution carries {}",
            h.modes(),
            res.modes
        )));
    }
    Ok(())
}

fn pad(h: &SpectralField, modes: usize) -> SpectralField {
    let mut c = h.coeffs().to_vec();
    c.resize(modes, 0.0);
    SpectralField::new(c).expect("finite direction")
}

/// Unconditioned identity for `Y = (𝔅 - 𝔅̄) + ζ` with standard normal `ζ`:
/// `E[∂_hΦ(Y) 1_K] = -E[(⟨Y,Ah⟩ - Ȳh̄) Φ(Y) 1_K] - ∫ h(r) (2π³r(1-r))^{-1/2} E[Φ(𝒰_r) e^{-Ū_r²/2}] dr`.
/// `1_K` is replaced by its conditional probability given the grid values.
pub fn ibp_unconditioned(
    phi: &TestFunctional,
    h: &SpectralField,
    res: Resolution,
    boundary: &BoundaryConfig,
    key: &StreamKey,
    count: usize,
) -> Result<IbpReport> {
    check_direction(h, &res)?;
    let h = pad(h, res.modes);
    let sampler = PathSampler::new(0.0, res.modes, res.grid)?;
    let seed = key.seed();
    let rows = replicate(&key.child("bulk"), count, |rng, _| {
        let mut s = sampler.draw(rng);
        let zeta: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
        s.field.values_mut().iter_mut().for_each(|v| *v += zeta);
        s.ends = [s.ends[0] + zeta, s.ends[1] + zeta];
        s.coeffs.coeffs_mut()[0] = zeta;
        let pk = bridge_positivity(s.ends, s.field.values());
        if pk == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let d = directional_derivative(phi, &s.coeffs, &h);
        let b = (inner_ah(&s.coeffs, &h) - zeta * h.mean()) * phi.eval(&s.coeffs);
        (pk, pk * d, -pk * b)
    });
    let col = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let lhs = McEstimate::from_samples(&col(|r| r.1), seed);
    let bulk = McEstimate::from_samples(&col(|r| r.2), seed);
    let kfrac = McEstimate::from_samples(&col(|r| r.0), seed).value;
    let transform = Transform::new(res.modes, res.grid)?;
    let nodes = meander_nodes(boundary, &transform, &key.child("boundary"), |g, c| {
        let ubar = g.mean();
        vec![phi.eval(c) * (-0.5 * ubar * ubar).exp()]
    });
    let b = boundary_plain(&nodes, &h, seed, 1.0 / (2.0 * PI).sqrt());
    let mut rep = IbpReport::new(format!("unconditioned {} h={}", phi.label(), direction_label(&h)), lhs, bulk, b.estimate);
    rep.quadrature_nodes = boundary.nodes;
    rep.k_fraction = Some(kfrac);
    Ok(rep)
}

/// `∫ ∂_{Πh}Φ dν^n = -∫ ⟨x,Ah⟩Φ dν^n - ∫ Πh(r) ∫ Φ f^n(x(r)) dν^n dr`,
/// all three terms from one importance ensemble.
pub fn ibp_gibbs_reg(
    phi: &TestFunctional,
    h: &SpectralField,
    spec: NonlinSpec,
    n: RegLevel,
    ens: &Ensemble,
) -> Result<IbpReport> {
    let modes = ens.samples.first().map(|s| s.coeffs.modes()).unwrap_or(0);
    let grid = ens.samples.first().map(|s| s.field.len()).unwrap_or(0);
    check_direction(h, &Resolution { modes, grid })?;
    let ph = pad(h, modes).project_zero_mean();
    let ph_grid = Transform::new(modes, grid)?.to_grid(&ph)?;
    let lhs = ens.expect(|s| directional_derivative(phi, &s.coeffs, &ph));
    let bulk = ens.expect(|s| -inner_ah(&s.coeffs, &ph) * phi.eval(&s.coeffs));
    let bnd = ens.expect(|s| -phi.eval(&s.coeffs) * grid_pairing(&s.field, &ph_grid, |x| spec.f_reg(n, x)));
    let mut rep = IbpReport::new(
        format!("gibbs {} n={} {} h={}", spec.label(), n.get(), phi.label(), direction_label(h)),
        lhs,
        bulk,
        bnd,
    );
    rep.ess = ens.ess();
    Ok(rep)
}

/// `r ↦ E_{ν^n}[f^n(x(r))]` at the grid points.
pub fn boundary_integrand_profile(spec: NonlinSpec, n: RegLevel, ens: &Ensemble) -> Vec<McEstimate> {
    let m = ens.samples.first().map(|s| s.field.len()).unwrap_or(0);
    (0..m).map(|j| ens.expect(|s| spec.f_reg(n, s.field.values()[j]))).collect()
}

/// The limit identity
/// `∫ ∂_{Πh}φ dν = -∫ (⟨x,Ah⟩ + ⟨f(x),Πh⟩) φ dν - ∫ Πh(r) ∫ φγ dΣ_r^c dr`
/// with `γ = e^{-U}/Z_c`, `Z_c = E_{μ_c}[e^{-U} 1_K]`, and
/// `Σ_r^c = p_{Ū_r}(c) / (π√(r(1-r))) · P(𝒰_r ∈ · | Ū_r = c)`.
/// `ens` must be a limit-measure ensemble on the same resolution.
pub fn ibp_limit(
    phi: &TestFunctional,
    h: &SpectralField,
    spec: NonlinSpec,
    c: f64,
    ens: &Ensemble,
    boundary: &BoundaryConfig,
    key: &StreamKey,
) -> Result<IbpReport> {
    if c <= 0.0 {
        return Err(Error::Precondition(format!("the limit identity needs c > 0, got {c}")));
    }
    let modes = ens.samples.first().map(|s| s.coeffs.modes()).unwrap_or(0);
    let grid = ens.samples.first().map(|s| s.field.len()).unwrap_or(0);
    check_direction(h, &Resolution { modes, grid })?;
    let transform = Transform::new(modes, grid)?;
    let ph = pad(h, modes).project_zero_mean();
    let ph_grid = transform.to_grid(&ph)?;
    let lhs = ens.expect(|s| directional_derivative(phi, &s.coeffs, &ph));
    let bulk = ens.expect(|s| {
        if s.log_weight == f64::NEG_INFINITY {
            return 0.0;
        }
        let fx = grid_pairing(&s.field, &ph_grid, |x| spec.f(x));
        -(inner_ah(&s.coeffs, &ph) + fx) * phi.eval(&s.coeffs)
    });
    let z = ens.weights.mean_weight(key.seed());
    let nodes = meander_nodes(boundary, &transform, &key.child("boundary"), |g, cf| {
        let u = spec.potential(g);
        vec![if u.is_finite() { phi.eval(cf) * (-u).exp() } else { 0.0 }]
    });
    let mut b = boundary_kde(&nodes, &ph, c, boundary.bandwidth, key.seed(), 1.0 / z.value);
    // Relative error of Z_c enters the boundary multiplicatively.
    let rel = z.stderr / z.value;
    b.estimate.stderr = b.estimate.stderr.hypot(b.estimate.value.abs() * rel);
    let mut rep = IbpReport::new(
        format!("limit {} c={c} {} h={}", spec.label(), phi.label(), direction_label(h)),
        lhs,
        bulk,
        b.estimate,
    );
    rep.bandwidth = b.bandwidth;
    rep.bandwidth_sensitivity = b.sensitivity;
    rep.conditioning_ess = b.conditioning_ess;
    rep.quadrature_nodes = boundary.nodes;
    rep.k_fraction = Some(ens.weights.support_fraction());
    rep.ess = ens.ess();
    Ok(rep)
}

/// Two routes to the level-`n` boundary term `-∫ Πh(r) I_r^n dr`:
/// the residual of the `K`-restricted identity under `γ^n μ_c`
/// (reported as `lhs`), and the kernel-conditioned meander expectation
/// (reported as `rhs_boundary`).
pub fn boundary_cross_check(
    phi: &TestFunctional,
    h: &SpectralField,
    spec: NonlinSpec,
    n: RegLevel,
    sampler: &PathSampler,
    count: usize,
    boundary: &BoundaryConfig,
    key: &StreamKey,
) -> Result<IbpReport> {
    let (modes, grid, c) = (sampler.modes(), sampler.grid(), sampler.mean_level());
    check_direction(h, &Resolution { modes, grid })?;
    let transform = Transform::new(modes, grid)?;
    let ph = pad(h, modes).project_zero_mean();
    let ph_grid = transform.to_grid(&ph)?;
    let seed = key.seed();
    let rows = replicate(&key.child("bulk"), count, |rng, _| {
        let s = sampler.draw(rng);
        let g = (-spec.potential_reg(n, &s.field)).exp();
        let pk = bridge_positivity(s.ends, s.field.values());
        let d = directional_derivative(phi, &s.coeffs, &ph);
        let fx = grid_pairing(&s.field, &ph_grid, |x| spec.f_reg(n, x));
        let bulk = (inner_ah(&s.coeffs, &ph) + fx) * phi.eval(&s.coeffs);
        (g, g * pk * (d + bulk))
    });
    let zs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let z = McEstimate::from_samples(&zs, seed);
    let res: Vec<f64> = rows.iter().map(|r| r.1 / z.value).collect();
    let residual = McEstimate::from_samples(&res, seed);
    let nodes = meander_nodes(boundary, &transform, &key.child("boundary"), |g, cf| {
        vec![phi.eval(cf) * (-spec.potential_reg(n, g)).exp()]
    });
    let b = boundary_kde(&nodes, &ph, c, boundary.bandwidth, seed, 1.0 / z.value);
    let zero = McEstimate::exact(0.0, seed);
    let mut rep = IbpReport::new(
        format!("boundary routes {} n={} {} h={}", spec.label(), n.get(), phi.label(), direction_label(h)),
        residual,
        zero,
        b.estimate,
    );
    rep.bandwidth = b.bandwidth;
    rep.bandwidth_sensitivity = b.sensitivity;
    rep.conditioning_ess = b.conditioning_ess;
    rep.quadrature_nodes = boundary.nodes;
    Ok(rep)
}

/// `L^nψ_h(x)` for `ψ_h = exp(i(x,h)₋₁)`, as (real, imaginary) parts:
/// `ψ · [-½‖Πh‖²₋₁ + i(-½(A²h,x)₋₁ + ½⟨f^n(x),Πh⟩)]`.
pub fn generator_apply(
    h: &SpectralField,
    x: &SpectralField,
    spec: NonlinSpec,
    n: RegLevel,
    transform: &Transform,
) -> Result<(f64, f64)> {
    let h = pad(h, x.modes());
    let ph = h.project_zero_mean();
    let norm = ph.norm_gamma(-1.0).seminorm.powi(2);
    let a2 = x.coeffs().iter().zip(h.coeffs()).enumerate().skip(1).map(|(i, (a, b))| neg_eigenvalue(i) * a * b).sum::<f64>();
    let xg = transform.to_grid(x)?;
    let hg = transform.to_grid(&ph)?;
    let fh = grid_pairing(&xg, &hg, |v| spec.f_reg(n, v));
    let phase = x.inner_vm1(&h);
    let (pr, pi) = (phase.cos(), phase.sin());
    let (ar, ai) = (-0.5 * norm, -0.5 * a2 + 0.5 * fh);
    Ok((pr * ar - pi * ai, pr * ai + pi * ar))
}

/// `E[ψ_h(X(Δt))]` after one integrator step from `x`, in closed form:
/// `(X(Δt), h)₋₁` is Gaussian given `x`.
pub fn one_step_expectation(h: &SpectralField, x: &SpectralField, it: &Integrator) -> (f64, f64) {
    let h = pad(h, x.modes());
    let mut ws = it.workspace();
    let mut mean_state = x.clone();
    it.step_deterministic(&mut mean_state, &mut ws);
    let m = mean_state.inner_vm1(&h);
    let dt = it.config().dt;
    let v: f64 = (1..x.modes())
        .map(|i| {
            let q = neg_eigenvalue(i);
            let a = h.coeffs()[i] / q;
            a * a * crate::dynamics::NoiseModel::variance_of(i, dt)
        })
        .sum();
    let amp = (-0.5 * v).exp();
    (amp * m.cos(), amp * m.sin())
}

/// Finite-time quotient against the analytic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub analytic: (f64, f64),
    pub slope: f64,
    pub pass: bool,
}

/// Quotients `(E[ψ_h(X(Δt))] - ψ_h(x)) / Δt` over `dts`, error against
/// [`generator_apply`] and the log-log slope of the error.
pub fn generator_quotient(
    h: &SpectralField,
    x: &SpectralField,
    spec: NonlinSpec,
    n: RegLevel,
    grid: usize,
    dts: &[f64],
) -> Result<GeneratorReport> {
    let transform = Transform::new(x.modes(), grid)?;
    let analytic = generator_apply(h, x, spec, n, &transform)?;
    let phase = x.inner_vm1(&pad(h, x.modes()));
    let psi = (phase.cos(), phase.sin());
    let mut errors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let cfg = SimConfig::new(x.modes(), grid, dt, dt, spec, n).with_mean(x.mean());
        let it = Integrator::new(cfg)?;
        let e = one_step_expectation(h, x, &it);
        let q = ((e.0 - psi.0) / dt, (e.1 - psi.1) / dt);
        errors.push((q.0 - analytic.0).hypot(q.1 - analytic.1));
    }
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    Ok(GeneratorReport { dts: dts.to_vec(), errors, analytic, slope, pass: (slope - 1.0).abs() <= 0.3 })
}

/// Monte Carlo version of the quotient: `replicas` independent steps.
pub fn generator_quotient_mc(
    h: &SpectralField,
    x: &SpectralField,
    it: &Integrator,
    key: &StreamKey,
    replicas: usize,
) -> (McEstimate, McEstimate) {
    let hp = pad(h, x.modes());
    let phase = x.inner_vm1(&hp);
    let dt = it.config().dt;
    let vals = replicate(key, replicas, |rng, _| {
        let mut ws = it.workspace();
        let mut y = x.clone();
        it.step(&mut y, &mut ws, rng);
        let p = y.inner_vm1(&hp);
        ((p.cos() - phase.cos()) / dt, (p.sin() - phase.sin()) / dt)
    });
    let re: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let im: Vec<f64> = vals.iter().map(|v| v.1).collect();
    (McEstimate::from_samples(&re, key.seed()), McEstimate::from_samples(&im, key.seed()))
}

/// `∫ L^nφ ψ dν^n` against `-½ ∫ ⟨-A∇φ, ∇ψ⟩ dν^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub label: String,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub z: f64,
    pub pass: bool,
}

/// Real generator `L^nφ = -½(⟨x, A²∇φ⟩ + ⟨f^n, A∇φ⟩) + ½Tr(-A∇²φ)` on a
/// sample of the Galerkin system.
pub fn generator_real(phi: &TestFunctional, s: &WeightedSample, spec: NonlinSpec, n: RegLevel, transform: &Transform) -> Option<f64> {
    let g = phi.gradient(&s.coeffs)?;
    let tr = phi.half_trace(&s.coeffs)?;
    let x_a2g: f64 = s.coeffs.coeffs().iter().zip(g.coeffs()).enumerate().map(|(i, (a, b))| eigenvalue(i).powi(2) * a * b).sum();
    let ag = transform.to_grid(&g.apply_a()).ok()?;
    let f_ag = grid_pairing(&s.field, &ag, |v| spec.f_reg(n, v));
    Some(-0.5 * (x_a2g + f_ag) + tr)
}

/// Symmetry of `L^n` in `L²(ν^n)`. The ensemble should come from a
/// projected sampler so that it matches the Galerkin invariant measure.
pub fn symmetry_check(
    phi: &TestFunctional,
    psi: &TestFunctional,
    spec: NonlinSpec,
    n: RegLevel,
    ens: &Ensemble,
) -> Result<SymmetryReport> {
    let s0 = ens.samples.first().ok_or_else(|| Error::Precondition("empty ensemble".into()))?;
    let transform = Transform::new(s0.coeffs.modes(), s0.field.len())?;
    for f in [phi, psi] {
        if f.half_trace(&s0.coeffs).is_none() {
            return Err(Error::Precondition(format!("{} is not a cylinder functional", f.label())));
        }
    }
    let lhs = ens.expect(|s| generator_real(phi, s, spec, n, &transform).expect("checked") * psi.eval(&s.coeffs));
    let rhs = ens.expect(|s| {
        let gp = phi.gradient(&s.coeffs).expect("checked");
        let gq = psi.gradient(&s.coeffs).expect("checked");
        -0.5 * gp.apply_neg_a_pow(1.0).inner_l2(&gq)
    });
    let d = (lhs.value - rhs.value).abs();
    let sigma = lhs.stderr.hypot(rhs.stderr);
    let z = if d == 0.0 { 0.0 } else { d / sigma };
    Ok(SymmetryReport {
        label: format!("symmetry {} n={} {} {}", spec.label(), n.get(), phi.label(), psi.label()),
        lhs,
        rhs,
        z,
        pass: z <= CLOSE_SIGMA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn field(modes: usize, seed: u64) -> SpectralField {
        let mut rng = StreamKey::new(seed).rng(0);
        SpectralField::new((0..modes).map(|i| rng.random_range(-1.0..1.0) / (1.0 + i as f64)).collect()).unwrap()
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let k = field(8, 1);
        let kinds = [
            TestFunctional::CosInner(k.clone()),
            TestFunctional::SinInner(k.clone()),
            TestFunctional::ExpNegSq,
            TestFunctional::Const(3.0),
        ];
        for seed in 2..12 {
            let x = field(8, seed);
            let h = field(8, seed + 100);
            for phi in &kinds {
                let f = phi.clone();
                let custom = TestFunctional::Custom { name: "fd".into(), f: Arc::new(move |y| f.eval(y)) };
                let a = directional_derivative(phi, &x, &h);
                let b = directional_derivative(&custom, &x, &h);
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{phi:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn cos_derivative_formula() {
        let k = SpectralField::unit(4, 1);
        let x = field(4, 3);
        let h = field(4, 4);
        let d = directional_derivative(&TestFunctional::CosInner(k.clone()), &x, &h);
        assert_relative_eq!(d, -dot(&x, &k).sin() * dot(&h, &k));
        assert_eq!(directional_derivative(&TestFunctional::Const(1.0), &x, &h), 0.0);
    }

    #[test]
    fn generator_examples() {
        let t = Transform::new(8, 16).unwrap();
        let n1 = RegLevel::new(1).unwrap();
        let x = field(8, 5);
        let (re, im) = generator_apply(&SpectralField::unit(8, 0), &x, NonlinSpec::Log, n1, &t).unwrap();
        assert_eq!((re, im), (0.0, 0.0));
        let (re, im) = generator_apply(&SpectralField::unit(8, 1), &SpectralField::zeros(8), NonlinSpec::Log, n1, &t).unwrap();
        assert_relative_eq!(re, -1.0 / (2.0 * PI * PI), epsilon = 1e-14);
        assert!(im.abs() < 1e-14);
    }

    #[test]
    fn generator_quotient_converges_linearly() {
        let x = SpectralField::new(vec![1.0, 0.2, -0.1, 0.05, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let h = SpectralField::unit(8, 1);
        let n = RegLevel::new(1).unwrap();
        let rep = generator_quotient(&h, &x, NonlinSpec::Log, n, 16, &[1e-3, 5e-4, 2.5e-4]).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn gibbs_identity_with_zero_mean_direction_is_trivial() {
        let s = PathSampler::new(2.0, 8, 16).unwrap();
        let n = RegLevel::new(4).unwrap();
        let ens = s.sample_nu_reg(NonlinSpec::Log, n, &StreamKey::new(6), 100).unwrap();
        let rep = ibp_gibbs_reg(&TestFunctional::ExpNegSq, &SpectralField::unit(8, 0), NonlinSpec::Log, n, &ens).unwrap();
        assert_eq!(rep.lhs.value, 0.0);
        assert_eq!(rep.rhs_bulk.value, 0.0);
        assert_eq!(rep.rhs_boundary.value, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn symmetry_rejects_non_cylinder() {
        let s = PathSampler::new(2.0, 8, 16).unwrap().projected();
        let n = RegLevel::new(4).unwrap();
        let ens = s.sample_nu_reg(NonlinSpec::Log, n, &StreamKey::new(7), 10).unwrap();
        assert!(symmetry_check(&TestFunctional::ExpNegSq, &TestFunctional::Const(1.0), NonlinSpec::Log, n, &ens).is_err());
        let r = symmetry_check(&TestFunctional::Const(1.0), &TestFunctional::Const(1.0), NonlinSpec::Log, n, &ens).unwrap();
        assert_eq!(r.lhs.value, 0.0);
        assert_eq!(r.rhs.value, 0.0);
    }
}
