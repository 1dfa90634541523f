//! Time integration of the regularized equation
//! `dX + ½(A²X + A f^n(X)) dt = B dW` in the cosine basis.
//!
//! The linear part is integrated exactly: mode `i` decays by
//! `exp(-dt (iπ)⁴ / 2)` and receives a Gaussian increment of variance
//! `(1 - exp(-dt (iπ)⁴)) / (iπ)²`. The nonlinear drift is explicit and
//! pre-multiplied by the full-step decay (Lawson-Euler). `A f^n(X)` is
//! evaluated on the `M`-point grid and truncated back to `N` modes. Mode 0
//! is never touched, so the mean is conserved bit for bit.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::spectral::{neg_eigenvalue, GridField, SpectralField, Transform};

/// Default bound on `dt · Lip(f^n)`.
pub const DEFAULT_STABILITY_CAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of cosine modes `N`.
    pub modes: usize,
    /// Grid size `M` used for the nonlinearity.
    pub grid: usize,
    pub dt: f64,
    /// Final time `T`.
    pub horizon: f64,
    pub spec: NonlinSpec,
    pub n: RegLevel,
    /// Mean level `c` of the state.
    pub mean: f64,
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub stability_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_STABILITY_CAP
}

impl SimConfig {
    pub fn new(modes: usize, grid: usize, dt: f64, horizon: f64, spec: NonlinSpec, n: RegLevel) -> Self {
        Self { modes, grid, dt, horizon, spec, n, mean: 0.0, seed: 0, stability_cap: DEFAULT_STABILITY_CAP }
    }

    pub fn with_mean(mut self, c: f64) -> Self {
        self.mean = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if self.modes == 0 || self.grid < self.modes {
            return Err(Error::Config(format!("need 1 ≤ N ≤ M, got N = {}, M = {}", self.modes, self.grid)));
        }
        if !self.mean.is_finite() {
            return Err(Error::Config("mean level must be finite".into()));
        }
        let lip = self.spec.lipschitz(self.n);
        if self.dt * lip > self.stability_cap {
            return Err(Error::Config(format!(
                "dt·Lip(f^n) = {:.4} exceeds the stability cap {} (dt = {}, Lip = {lip}); use dt ≤ {:.3e}",
                self.dt * lip,
                self.stability_cap,
                self.dt,
                self.stability_cap / lip
            )));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon; the last one may be shorter.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Per-mode Gaussian increments of the stochastic convolution over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    dt: f64,
    std: Vec<f64>,
}

impl NoiseModel {
    pub fn new(modes: usize, dt: f64) -> Self {
        let std = (0..modes).map(|i| Self::variance_of(i, dt).sqrt()).collect();
        Self { dt, std }
    }

    /// `(1 - e^{-dt (iπ)⁴}) / (iπ)²`, zero for the mean mode.
    pub fn variance_of(i: usize, dt: f64) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let q = neg_eigenvalue(i);
        -(-dt * q * q).exp_m1() / q
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.std[i] * self.std[i]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Exact decay `exp(-dt (iπ)⁴ / 2)` of the linear flow.
pub fn decay_factor(i: usize, dt: f64) -> f64 {
    let q = neg_eigenvalue(i);
    (-0.5 * dt * q * q).exp()
}

#[derive(Debug, Clone)]
struct StepFactors {
    decay: Vec<f64>,
    /// `(dt/2)(iπ)²`, multiplies the drift coefficients.
    drift_gain: Vec<f64>,
    noise: NoiseModel,
}

impl StepFactors {
    fn new(modes: usize, dt: f64) -> Self {
        Self {
            decay: (0..modes).map(|i| decay_factor(i, dt)).collect(),
            drift_gain: (0..modes).map(|i| 0.5 * dt * neg_eigenvalue(i)).collect(),
            noise: NoiseModel::new(modes, dt),
        }
    }
}

/// Exact transition of the linear equation over `dt`.
pub fn linear_step<R: Rng + ?Sized>(h: &SpectralField, dt: f64, rng: &mut R) -> SpectralField {
    let f = StepFactors::new(h.modes(), dt);
    let mut out = h.coeffs().to_vec();
    for i in 1..out.len() {
        let z: f64 = rng.sample(StandardNormal);
        out[i] = f.decay[i] * out[i] + f.noise.std[i] * z;
    }
    SpectralField::from_vec_unchecked(out)
}

/// A sampled path `X^n(t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub noise_seed: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Scratch buffers for one integrator thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    grid: Vec<f64>,
    buf: Vec<f64>,
    scratch: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
}

/// Whether the nonlinear drift is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    Regularized,
    Off,
}

#[derive(Debug, Clone)]
pub struct Integrator {
    cfg: SimConfig,
    transform: Transform,
    full: StepFactors,
    last: Option<StepFactors>,
    drift: Drift,
}

impl Integrator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        Self::build(cfg, Drift::Regularized)
    }

    /// The pure linear flow `Z` (no nonlinear drift).
    pub fn linear(cfg: SimConfig) -> Result<Self> {
        Self::build(cfg, Drift::Off)
    }

    fn build(cfg: SimConfig, drift: Drift) -> Result<Self> {
        cfg.validate()?;
        let transform = Transform::new(cfg.modes, cfg.grid)?;
        let full = StepFactors::new(cfg.modes, cfg.dt);
        let steps = cfg.steps();
        let tail = cfg.horizon - (steps.saturating_sub(1)) as f64 * cfg.dt;
        let last = (steps > 0 && (tail - cfg.dt).abs() > 1e-12 * cfg.dt).then(|| StepFactors::new(cfg.modes, tail));
        Ok(Self { cfg, transform, full, last, drift })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            grid: vec![0.0; self.cfg.grid],
            buf: vec![0.0; self.cfg.grid],
            scratch: vec![0.0; self.transform.scratch_len()],
            drift: vec![0.0; self.cfg.modes],
            noise: vec![0.0; self.cfg.modes],
        }
    }

    /// Coefficients of `f^n(X)` (before multiplication by `A`).
    pub fn nonlinear_coeffs(&self, state: &SpectralField) -> SpectralField {
        let mut ws = self.workspace();
        self.eval_drift(state.coeffs(), &mut ws);
        SpectralField::from_vec_unchecked(ws.drift.clone())
    }

    /// Grid values of a state.
    pub fn grid_values(&self, state: &SpectralField, ws: &mut Workspace) -> GridField {
        self.transform.to_grid_into(state.coeffs(), &mut ws.grid, &mut ws.scratch);
        GridField::new(ws.grid.clone())
    }

    fn eval_drift(&self, a: &[f64], ws: &mut Workspace) {
        let (spec, n) = (self.cfg.spec, self.cfg.n);
        self.transform.to_grid_into(a, &mut ws.grid, &mut ws.scratch);
        for v in ws.grid.iter_mut() {
            *v = spec.f_reg(n, *v);
        }
        self.transform.to_spectral_into(&ws.grid, &mut ws.buf, &mut ws.scratch, &mut ws.drift);
    }

    fn draw_noise<R: Rng + ?Sized>(ws: &mut Workspace, rng: &mut R) {
        ws.noise[0] = 0.0;
        for z in ws.noise[1..].iter_mut() {
            *z = rng.sample(StandardNormal);
        }
    }

    fn apply(&self, a: &mut [f64], f: &StepFactors, ws: &mut Workspace) {
        if self.drift == Drift::Regularized {
            self.eval_drift(a, ws);
            for i in 1..a.len() {
                a[i] = f.decay[i] * (a[i] + f.drift_gain[i] * ws.drift[i]) + f.noise.std[i] * ws.noise[i];
            }
        } else {
            for i in 1..a.len() {
                a[i] = f.decay[i] * a[i] + f.noise.std[i] * ws.noise[i];
            }
        }
    }

    /// One full step of size `dt`.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut SpectralField, ws: &mut Workspace, rng: &mut R) {
        Self::draw_noise(ws, rng);
        self.apply(state.coeffs_mut(), &self.full, ws);
    }

    /// One step with the noise replaced by zero.
    pub fn step_deterministic(&self, state: &mut SpectralField, ws: &mut Workspace) {
        ws.noise.fill(0.0);
        self.apply(state.coeffs_mut(), &self.full, ws);
    }

    fn factors_for(&self, k: usize, steps: usize) -> &StepFactors {
        match &self.last {
            Some(last) if k + 1 == steps => last,
            _ => &self.full,
        }
    }

    /// Advance to the horizon, calling `observe(t, state)` at every time
    /// level including `t = 0`.
    pub fn run<R, F>(&self, x0: &SpectralField, rng: &mut R, mut observe: F) -> SpectralField
    where
        R: Rng + ?Sized,
        F: FnMut(f64, &SpectralField),
    {
        self.check_shape(x0);
        let mut ws = self.workspace();
        let mut x = x0.clone();
        let steps = self.cfg.steps();
        let mut t = 0.0;
        observe(t, &x);
        for k in 0..steps {
            let f = self.factors_for(k, steps);
            Self::draw_noise(&mut ws, rng);
            self.apply(x.coeffs_mut(), f, &mut ws);
            t = if k + 1 == steps { self.cfg.horizon } else { (k + 1) as f64 * self.cfg.dt };
            observe(t, &x);
        }
        x
    }

    /// Final state only.
    pub fn evolve<R: Rng + ?Sized>(&self, x0: &SpectralField, rng: &mut R) -> SpectralField {
        self.run(x0, rng, |_, _| {})
    }

    pub fn simulate<R: Rng + ?Sized>(&self, x0: &SpectralField, rng: &mut R) -> Trajectory {
        let mut times = Vec::with_capacity(self.cfg.steps() + 1);
        let mut states = Vec::with_capacity(self.cfg.steps() + 1);
        self.run(x0, rng, |t, x| {
            times.push(t);
            states.push(x.clone());
        });
        Trajectory { times, states, noise_seed: self.cfg.seed }
    }

    /// Two trajectories driven by the same noise realization. Their means
    /// must agree.
    pub fn coupled_simulate<R: Rng + ?Sized>(
        &self,
        x0: &SpectralField,
        y0: &SpectralField,
        rng: &mut R,
    ) -> Result<(Trajectory, Trajectory)> {
        if x0.mean() != y0.mean() {
            return Err(Error::Precondition(format!(
                "coupled initial conditions need equal means, got {} and {}",
                x0.mean(),
                y0.mean()
            )));
        }
        self.check_shape(x0);
        self.check_shape(y0);
        let mut ws = self.workspace();
        let steps = self.cfg.steps();
        let (mut x, mut y) = (x0.clone(), y0.clone());
        let mut tx = Trajectory { times: vec![0.0], states: vec![x.clone()], noise_seed: self.cfg.seed };
        let mut ty = tx.clone();
        ty.states[0] = y.clone();
        for k in 0..steps {
            let f = self.factors_for(k, steps);
            Self::draw_noise(&mut ws, rng);
            self.apply(x.coeffs_mut(), f, &mut ws);
            self.apply(y.coeffs_mut(), f, &mut ws);
            let t = if k + 1 == steps { self.cfg.horizon } else { (k + 1) as f64 * self.cfg.dt };
            tx.times.push(t);
            ty.times.push(t);
            tx.states.push(x.clone());
            ty.states.push(y.clone());
        }
        Ok((tx, ty))
    }

    fn check_shape(&self, x: &SpectralField) {
        assert_eq!(x.modes(), self.cfg.modes, "state has {} modes, integrator expects {}", x.modes(), self.cfg.modes);
    }
}

/// Envelope `exp(-t π⁴ / 2)` of the `V₋₁` contraction.
pub fn contraction_envelope(t: f64) -> f64 {
    let p2 = std::f64::consts::PI.powi(2);
    (-0.5 * t * p2 * p2).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_relative_eq;

    fn cfg(spec: NonlinSpec, n: u32) -> SimConfig {
        SimConfig::new(16, 32, 1e-3, 0.01, spec, RegLevel::new(n).unwrap())
    }

    #[test]
    fn linear_factors() {
        assert_relative_eq!(decay_factor(1, 0.01), 0.614_43, epsilon = 1e-5);
        assert_relative_eq!((-0.487_045f64).exp(), decay_factor(1, 0.01), epsilon = 1e-6);
        assert_relative_eq!(NoiseModel::variance_of(1, 0.01), 0.063_07, epsilon = 1e-5);
        assert_eq!(NoiseModel::variance_of(0, 0.01), 0.0);
        assert_relative_eq!(contraction_envelope(0.1), (-4.870_454f64).exp(), max_relative = 1e-6);
    }

    #[test]
    fn constant_state_is_fixed_without_noise() {
        let it = Integrator::new(cfg(NonlinSpec::Log, 8).with_mean(1.3)).unwrap();
        let mut ws = it.workspace();
        let mut x = SpectralField::constant(16, 1.3);
        for _ in 0..10 {
            it.step_deterministic(&mut x, &mut ws);
        }
        assert_eq!(x.coeffs()[0], 1.3);
        assert!(x.coeffs()[1..].iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn constant_nonlinearity_has_no_drift() {
        let it = Integrator::new(cfg(NonlinSpec::power(2.0).unwrap(), 2)).unwrap();
        let d = it.nonlinear_coeffs(&SpectralField::constant(16, 0.7));
        assert!(d.coeffs()[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn zero_horizon_is_the_initial_state() {
        let it = Integrator::new(cfg(NonlinSpec::Log, 1).with_horizon(0.0)).unwrap();
        let x0 = SpectralField::unit(16, 2);
        let tr = it.simulate(&x0, &mut StreamKey::new(1).rng(0));
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.states[0], x0);
    }

    #[test]
    fn step_count_and_partial_last_step() {
        let c = cfg(NonlinSpec::Log, 1).with_horizon(0.0105);
        assert_eq!(c.steps(), 11);
        let tr = Integrator::new(c).unwrap().simulate(&SpectralField::zeros(16), &mut StreamKey::new(2).rng(0));
        assert_eq!(tr.times.len(), 12);
        assert_eq!(*tr.times.last().unwrap(), 0.0105);
        assert_eq!(cfg(NonlinSpec::Log, 1).with_horizon(0.01).steps(), 10);
    }

    #[test]
    fn mean_is_conserved_bit_for_bit() {
        let c = cfg(NonlinSpec::power(0.5).unwrap(), 4).with_horizon(0.2).with_mean(0.37);
        let it = Integrator::new(c).unwrap();
        let mut x0 = SpectralField::constant(16, 0.37);
        x0.coeffs_mut()[1] = 0.5;
        let tr = it.simulate(&x0, &mut StreamKey::new(3).rng(0));
        assert!(tr.states.iter().all(|s| s.coeffs()[0] == 0.37));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let it = Integrator::new(cfg(NonlinSpec::Log, 8).with_mean(1.0)).unwrap();
        let x0 = SpectralField::constant(16, 1.0);
        let a = it.simulate(&x0, &mut StreamKey::new(4).rng(9));
        let b = it.simulate(&x0, &mut StreamKey::new(4).rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_identical_starts_stay_identical() {
        let it = Integrator::new(cfg(NonlinSpec::Log, 8).with_mean(1.0)).unwrap();
        let x0 = SpectralField::constant(16, 1.0);
        let (a, b) = it.coupled_simulate(&x0, &x0, &mut StreamKey::new(5).rng(0)).unwrap();
        assert_eq!(a.states, b.states);
        let y0 = SpectralField::constant(16, 1.5);
        assert!(matches!(it.coupled_simulate(&x0, &y0, &mut StreamKey::new(5).rng(0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn stability_cap_is_enforced() {
        let bad = SimConfig::new(16, 32, 1e-2, 1.0, NonlinSpec::power(2.0).unwrap(), RegLevel::new(8).unwrap());
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(Integrator::new(bad).is_err());
        let bad_grid = SimConfig::new(16, 8, 1e-3, 1.0, NonlinSpec::Log, RegLevel::new(1).unwrap());
        assert!(bad_grid.validate().is_err());
    }
}
