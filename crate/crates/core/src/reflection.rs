//! Computable surrogates for the reflection measure: the penalization mass
//! `∫∫ f^n(X^n)`, the contact statistic near zero, and the stationary
//! integration-by-parts defect `D(k)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::Integrator;
use crate::error::{Error, Result};
use crate::measures::{limit_log_weight, Ensemble, KMonitor, PathSampler};
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::rng::{replicate, StreamKey, StreamRng};
use crate::spectral::{GridField, SpectralField, Transform};
use crate::stats::{McEstimate, Weights};
use crate::verification::{grid_pairing, inner_ah};

/// `∫₀¹ f^n(x(θ)) dθ` by the midpoint rule.
pub fn f_mass(spec: NonlinSpec, n: RegLevel, x: &GridField) -> f64 {
    x.integrate(|v| spec.f_reg(n, v))
}

/// Trapezoidal integral of samples `y(t_k)` over `[s, t]`, with linear
/// interpolation at the window ends.
pub fn time_integral(times: &[f64], y: &[f64], s: f64, t: f64) -> f64 {
    if t <= s {
        return 0.0;
    }
    let interp = |x: f64| -> f64 {
        let k = times.partition_point(|&u| u < x).clamp(1, times.len() - 1);
        let (t0, t1) = (times[k - 1], times[k]);
        let w = ((x - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - w) * y[k - 1] + w * y[k]
    };
    let mut pts = vec![(s, interp(s))];
    pts.extend(times.iter().zip(y).filter(|(&u, _)| u > s && u < t).map(|(&u, &v)| (u, v)));
    pts.push((t, interp(t)));
    pts.windows(2).map(|p| 0.5 * (p[1].0 - p[0].0) * (p[0].1 + p[1].1)).sum()
}

/// Penalization mass `∫_s^t ∫₀¹ f^n(X^n) dθ du` along one trajectory.
pub fn penalization_mass(it: &Integrator, traj: &crate::dynamics::Trajectory, s: f64, t: f64) -> Result<f64> {
    if !(0.0 <= s && s <= t && t <= *traj.times.last().unwrap_or(&0.0)) {
        return Err(Error::Precondition(format!("window [{s}, {t}] outside the trajectory")));
    }
    let cfg = it.config();
    let mut ws = it.workspace();
    let y: Vec<f64> = traj.states.iter().map(|x| f_mass(cfg.spec, cfg.n, &it.grid_values(x, &mut ws))).collect();
    Ok(time_integral(&traj.times, &y, s, t))
}

/// Replicas of the regularized dynamics started from the first `replicas`
/// members of an importance ensemble for `ν_c^n`. Each replica carries the
/// weight of its initial state, so weighted averages at any time are
/// stationary expectations.
pub fn weighted_runs<T, F>(ens: &Ensemble, key: &StreamKey, replicas: usize, f: F) -> (Weights, Vec<T>)
where
    T: Send,
    F: Fn(&SpectralField, &mut StreamRng) -> T + Sync + Send,
{
    let replicas = replicas.min(ens.len());
    let lw: Vec<f64> = ens.samples[..replicas].iter().map(|s| s.log_weight).collect();
    let out = replicate(key, replicas, |rng, i| f(&ens.samples[i].coeffs, rng));
    (Weights::from_log(&lw), out)
}

/// Contact integrand variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContactWeight {
    /// `x f^n(x) 1_{x<ε}`.
    Linear,
    /// `x^{α+γ} f^n(x) 1_{0≤x<ε}`.
    Power { gamma: f64 },
}

impl ContactWeight {
    pub fn integrand(self, spec: NonlinSpec, n: RegLevel, eps: f64, x: f64) -> f64 {
        if x >= eps {
            return 0.0;
        }
        match self {
            Self::Linear => x * spec.f_reg(n, x),
            Self::Power { gamma } => {
                if x < 0.0 {
                    0.0
                } else {
                    x.powf(spec.alpha().unwrap_or(0.0) + gamma) * spec.f_reg(n, x)
                }
            }
        }
    }

    /// The bound `T·ε^γ`, `T ε^{1-α}` or `-T ε ln ε` matching the case.
    pub fn bound(self, spec: NonlinSpec, eps: f64, horizon: f64) -> f64 {
        horizon
            * match (self, spec) {
                (Self::Power { gamma }, _) => eps.powf(gamma),
                (Self::Linear, NonlinSpec::Log) => -eps * eps.ln(),
                (Self::Linear, NonlinSpec::Power { alpha }) => eps.powf(1.0 - alpha),
            }
    }
}

/// Space-time integrals along one replica: penalization mass per window
/// and contact statistic per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub window_masses: Vec<f64>,
    pub contact: Vec<f64>,
}

/// Run `replicas` stationary replicas to the integrator horizon and
/// integrate the penalization mass over `windows` and the contact
/// integrand for each `eps`.
pub fn stationary_run_summaries(
    it: &Integrator,
    ens: &Ensemble,
    key: &StreamKey,
    replicas: usize,
    windows: &[(f64, f64)],
    eps: &[f64],
    weight: ContactWeight,
) -> (Weights, Vec<RunSummary>) {
    let cfg = it.config().clone();
    weighted_runs(ens, key, replicas, |x0, rng| {
        let mut ws = it.workspace();
        let mut times = Vec::new();
        let mut mass = Vec::new();
        let mut contact: Vec<Vec<f64>> = vec![Vec::new(); eps.len()];
        it.run(x0, rng, |t, x| {
            let g = it.grid_values(x, &mut ws);
            times.push(t);
            mass.push(f_mass(cfg.spec, cfg.n, &g));
            for (k, &e) in eps.iter().enumerate() {
                contact[k].push(g.integrate(|v| weight.integrand(cfg.spec, cfg.n, e, v)));
            }
        });
        let horizon = cfg.horizon;
        RunSummary {
            window_masses: windows.iter().map(|&(s, t)| time_integral(&times, &mass, s, t)).collect(),
            contact: contact.iter().map(|c| time_integral(&times, c, 0.0, horizon)).collect(),
        }
    })
}

/// `E_{ν^n}[∫₀¹ f^n(x) dθ]`.
pub fn stationary_f_mass(spec: NonlinSpec, n: RegLevel, ens: &Ensemble) -> McEstimate {
    ens.expect(|s| f_mass(spec, n, &s.field))
}

/// `E_ν[∫₀¹ f(x) dθ]` over the `K`-samples of a limit ensemble.
pub fn limit_f_mass(spec: NonlinSpec, ens: &Ensemble) -> McEstimate {
    ens.expect(|s| if s.log_weight == f64::NEG_INFINITY { 0.0 } else { s.field.integrate(|v| spec.f(v)) })
}

/// `D(k) = E_ν[⟨x, Ak⟩ + ⟨f(x), Πk⟩]` over a limit ensemble.
pub fn ibp_defect(k: &SpectralField, spec: NonlinSpec, ens: &Ensemble) -> Result<McEstimate> {
    let s0 = ens.samples.first().ok_or_else(|| Error::Precondition("empty ensemble".into()))?;
    let (modes, grid) = (s0.coeffs.modes(), s0.field.len());
    if k.modes() > modes {
        return Err(Error::Precondition(format!("direction has {} modes, ensemble carries {modes}", k.modes())));
    }
    let mut kc = k.coeffs().to_vec();
    kc.resize(modes, 0.0);
    let pk = SpectralField::new(kc)?.project_zero_mean();
    if pk.coeffs().iter().all(|&c| c == 0.0) {
        return Ok(McEstimate { ess: ens.ess(), count: ens.len(), ..McEstimate::exact(0.0, ens.seed) });
    }
    let kg = Transform::new(modes, grid)?.to_grid(&pk)?;
    Ok(ens.expect(|s| {
        if s.log_weight == f64::NEG_INFINITY {
            0.0
        } else {
            inner_ah(&s.coeffs, &pk) + grid_pairing(&s.field, &kg, |v| spec.f(v))
        }
    }))
}

/// One cell of a threshold scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub spec: String,
    pub alpha: Option<f64>,
    /// `None` for statistics of the limit measure.
    pub n: Option<u32>,
    pub statistic: String,
    pub estimate: f64,
    pub stderr: f64,
    pub ess: f64,
    pub seed: u64,
}

impl ScanCell {
    pub fn new(spec: NonlinSpec, n: Option<u32>, statistic: impl Into<String>, est: McEstimate) -> Self {
        Self {
            spec: spec.label(),
            alpha: spec.alpha(),
            n,
            statistic: statistic.into(),
            estimate: est.value,
            stderr: est.stderr,
            ess: est.ess,
            seed: est.seed,
        }
    }
}

/// Positivity tests of a threshold scan. The gap compares against the limit
/// that `ν^n` converges to on the grid; the defect concerns the continuum
/// cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMonitors {
    pub gap: KMonitor,
    pub defect: KMonitor,
}

impl Default for ScanMonitors {
    fn default() -> Self {
        Self { gap: KMonitor::Grid, defect: KMonitor::Bridge }
    }
}

/// Gap `E_{ν^n}[∫f^n] - E_ν[∫f]` per `n`, and `D(k)` per direction, for each
/// spec, all on one set of `μ_c` draws. The gap error adds the two errors in
/// quadrature, which is conservative under the positive correlation of
/// common random numbers.
pub fn threshold_scan(
    specs: &[NonlinSpec],
    n_grid: &[RegLevel],
    directions: &[(String, SpectralField)],
    sampler: &PathSampler,
    monitors: ScanMonitors,
    key: &StreamKey,
    count: usize,
) -> Result<Vec<ScanCell>> {
    if sampler.mean_level() <= 0.0 {
        return Err(Error::Precondition("threshold scans need c > 0".into()));
    }
    let base = sampler.sample_mu_c(key, count);
    let mut cells = Vec::new();
    for &spec in specs {
        let lim = base.reweighted(|s| limit_log_weight(spec, monitors.gap, s));
        let lm = limit_f_mass(spec, &lim);
        cells.push(ScanCell::new(spec, None, "f_mass", lm));
        for &n in n_grid {
            let reg = base.reweighted(|s| -spec.potential_reg(n, &s.field));
            let m = stationary_f_mass(spec, n, &reg);
            cells.push(ScanCell::new(spec, Some(n.get()), "f_mass", m));
            let gap = McEstimate { value: m.value - lm.value, stderr: m.stderr.hypot(lm.stderr), ess: m.ess.min(lm.ess), ..m };
            cells.push(ScanCell::new(spec, Some(n.get()), "gap", gap));
        }
        let lim_d = if monitors.defect == monitors.gap {
            lim
        } else {
            base.reweighted(|s| limit_log_weight(spec, monitors.defect, s))
        };
        for (name, k) in directions {
            cells.push(ScanCell::new(spec, None, format!("defect_{name}"), ibp_defect(k, spec, &lim_d)?));
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimConfig;
    use approx::assert_relative_eq;

    #[test]
    fn time_integral_of_linear_data() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(time_integral(&t, &y, 0.0, 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(time_integral(&t, &y, 0.25, 0.75), 0.5, epsilon = 1e-12);
        assert_eq!(time_integral(&t, &y, 0.5, 0.5), 0.0);
    }

    #[test]
    fn empty_window_has_no_mass() {
        let cfg = SimConfig::new(8, 16, 1e-3, 0.01, NonlinSpec::Log, RegLevel::new(4).unwrap()).with_mean(2.0);
        let it = Integrator::new(cfg).unwrap();
        let tr = it.simulate(&SpectralField::constant(8, 2.0), &mut StreamKey::new(1).rng(0));
        assert_eq!(penalization_mass(&it, &tr, 0.005, 0.005).unwrap(), 0.0);
        let full = penalization_mass(&it, &tr, 0.0, 0.01).unwrap();
        assert!(full.is_finite());
        assert!(penalization_mass(&it, &tr, 0.0, 0.02).is_err());
    }

    #[test]
    fn defect_along_constants_vanishes() {
        let s = PathSampler::new(2.0, 8, 16).unwrap();
        let ens = s.sample_nu_limit(NonlinSpec::Log, KMonitor::Grid, &StreamKey::new(2), 50).unwrap();
        let d = ibp_defect(&SpectralField::unit(8, 0), NonlinSpec::Log, &ens).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(d.stderr, 0.0);
    }

    #[test]
    fn contact_integrand_respects_bounds() {
        let n = RegLevel::new(1000).unwrap();
        let eps = 0.01;
        let log_b = ContactWeight::Linear.bound(NonlinSpec::Log, eps, 1.0);
        let p = NonlinSpec::power(0.5).unwrap();
        let p_b = ContactWeight::Linear.bound(p, eps, 1.0);
        let q = NonlinSpec::power(2.0).unwrap();
        let q_b = ContactWeight::Power { gamma: 1.0 }.bound(q, eps, 1.0);
        for k in 0..=100 {
            let x = eps * k as f64 / 100.0;
            assert!(ContactWeight::Linear.integrand(NonlinSpec::Log, n, eps, x) <= log_b + 1e-15);
            assert!(ContactWeight::Linear.integrand(p, n, eps, x) <= p_b + 1e-15);
            assert!(ContactWeight::Power { gamma: 1.0 }.integrand(q, n, eps, x) <= q_b + 1e-15);
        }
        assert_eq!(ContactWeight::Linear.integrand(NonlinSpec::Log, n, eps, 0.5), 0.0);
    }
}
