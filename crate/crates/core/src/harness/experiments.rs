//! The subcommands. Each one writes a [`Report`] and decides the acceptance
//! criteria that belong to it.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{scaled, ExperimentConfig};
use super::records::{Report, ResultRecord, Table};
use crate::dynamics::{contraction_envelope, Integrator, NoiseModel, SimConfig};
use crate::error::Result;
use crate::meander::{j_r_n, sample_meander, sample_meander_at, sample_meander_rejection, v_tau_law_check};
use crate::measures::{weak_convergence_scan, Functional, KMonitor, PathSampler, ScanRow, WeightedSample};
use crate::nonlinearity::{NonlinSpec, RegLevel};
use crate::reflection::{
    stationary_f_mass, stationary_run_summaries, threshold_scan, ContactWeight, ScanCell, ScanMonitors,
};
use crate::rng::{replicate, StreamKey};
use crate::spectral::{SpectralField, Transform};
use crate::stats::{ks_weighted_vs_cdf, McEstimate};
use crate::verification::{
    boundary_cross_check, boundary_integrand_profile, generator_quotient, ibp_gibbs_reg, ibp_limit,
    ibp_unconditioned, symmetry_check, IbpReport, Resolution, TestFunctional,
};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub title: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: &str, title: &str, pass: bool, detail: String) -> Self {
        Self { id: id.into(), title: title.into(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} criterion {:>3}  {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title, self.detail)
    }
}

/// A report plus the criteria it decided.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    LinearCheck,
    Contraction,
    InvariantCheck,
    MeasuresScan,
    MeanderTest,
    IbpVerify,
    ReflectionScan,
}

impl Experiment {
    pub const ALL: [Self; 8] = [
        Self::Simulate,
        Self::LinearCheck,
        Self::Contraction,
        Self::InvariantCheck,
        Self::MeasuresScan,
        Self::MeanderTest,
        Self::IbpVerify,
        Self::ReflectionScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::LinearCheck => "linear-check",
            Self::Contraction => "contraction",
            Self::InvariantCheck => "invariant-check",
            Self::MeasuresScan => "measures-scan",
            Self::MeanderTest => "meander-test",
            Self::IbpVerify => "ibp-verify",
            Self::ReflectionScan => "reflection-scan",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Validate `cfg` and run.
    pub fn run(self, cfg: &ExperimentConfig) -> Result<Outcome> {
        cfg.validate()?;
        let ctx = Ctx::new(cfg, self.name());
        let start = Instant::now();
        let mut out = match self {
            Self::Simulate => simulate(&ctx),
            Self::LinearCheck => linear_check(&ctx),
            Self::Contraction => contraction(&ctx),
            Self::InvariantCheck => invariant_check(&ctx),
            Self::MeasuresScan => measures_scan(&ctx),
            Self::MeanderTest => meander_test(&ctx),
            Self::IbpVerify => ibp_verify(&ctx),
            Self::ReflectionScan => reflection_scan(&ctx),
        }?;
        let secs = start.elapsed().as_secs_f64();
        out.report.note(format!(
            "{}: {} records, {} failed",
            self.name(),
            out.report.records.len(),
            out.report.failures()
        ));
        for c in &out.criteria {
            out.report.note(c.line());
        }
        if let Some(r) = out.report.records.last_mut() {
            r.wall_time = Some(secs);
        }
        Ok(out)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    key: StreamKey,
    exp: &'static str,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ExperimentConfig, exp: &'static str) -> Self {
        Self { cfg, key: StreamKey::new(cfg.seed).child(exp), exp }
    }

    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn size(&self, base: usize, floor: usize) -> usize {
        scaled(base, self.cfg.scale(), floor)
    }

    fn modes(&self) -> usize {
        self.cfg.sim.modes
    }

    fn grid(&self) -> usize {
        self.cfg.sim.grid
    }

    fn res(&self) -> Resolution {
        Resolution { modes: self.modes(), grid: self.grid() }
    }

    fn rec(&self, statistic: &str, est: &McEstimate) -> ResultRecord {
        ResultRecord::new(self.exp, est).param("statistic", statistic)
    }

    fn exact(&self, statistic: &str, value: f64) -> ResultRecord {
        ResultRecord::exact(self.exp, value, self.seed()).param("statistic", statistic)
    }
}

fn level(n: u32) -> RegLevel {
    RegLevel::new(n).expect("levels used here are positive")
}

fn power(alpha: f64) -> NonlinSpec {
    NonlinSpec::power(alpha).expect("exponents used here are positive")
}

/// Largest step at most `dt_max` with `dt · Lip ≤ 0.4`.
fn stable_dt(spec: NonlinSpec, n: RegLevel, dt_max: f64) -> f64 {
    dt_max.min(0.4 / spec.lipschitz(n))
}

fn spec_record(r: ResultRecord, spec: NonlinSpec) -> ResultRecord {
    let r = r.param("spec", spec.label());
    match spec.alpha() {
        Some(a) => r.param("alpha", a),
        None => r,
    }
}

fn ibp_record(ctx: &Ctx, formula: &str, rep: &IbpReport, spec: Option<NonlinSpec>, n: Option<RegLevel>) -> ResultRecord {
    let disc = McEstimate {
        value: rep.lhs.value - rep.rhs_bulk.value - rep.rhs_boundary.value,
        stderr: rep.sigma_combined,
        ess: rep.ess,
        count: rep.lhs.count,
        seed: ctx.seed(),
    };
    let mut r = ctx
        .rec("discrepancy", &disc)
        .param("formula", formula)
        .param("pair", rep.label.clone())
        .param("lhs", rep.lhs.value)
        .param("rhs_bulk", rep.rhs_bulk.value)
        .param("rhs_boundary", rep.rhs_boundary.value)
        .param("rhs_boundary_stderr", rep.rhs_boundary.stderr)
        .param("z", rep.z())
        .param("quadrature_nodes", rep.quadrature_nodes as u64);
    if let Some(b) = rep.bandwidth {
        r = r.param("bandwidth", b);
    }
    if let Some(b) = rep.bandwidth_sensitivity {
        r = r.param("bandwidth_sensitivity", b);
    }
    if let Some(e) = rep.conditioning_ess {
        r = r.param("conditioning_ess", e);
    }
    if let Some(k) = rep.k_fraction {
        r = r.param("k_fraction", k);
    }
    if let Some(s) = spec {
        r = spec_record(r, s);
    }
    if let Some(n) = n {
        r = r.param("n", n.get());
    }
    r.with_pass(rep.pass)
}

fn random_field<R: Rng + ?Sized>(modes: usize, rng: &mut R) -> Result<SpectralField> {
    SpectralField::new((0..modes).map(|i| rng.random_range(-1.0..1.0) / (1.0 + i as f64)).collect())
}

fn max_abs_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &SpectralField) -> f64 {
    a.coeffs().iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn simulate(ctx: &Ctx) -> Result<Outcome> {
    let sim = ctx.cfg.sim_config()?;
    let it = Integrator::new(sim.clone())?;
    let sampler = PathSampler::new(sim.mean, sim.modes, sim.grid)?.projected();
    let mut rep = Report::new(ctx.exp);
    let mut rows = Vec::new();
    let stride = ctx.cfg.sim.stride;
    for r in 0..ctx.cfg.sim.trajectories {
        let x0 = sampler.draw(&mut ctx.key.child("init").rng(r as u64)).coeffs;
        let traj = it.simulate(&x0, &mut ctx.key.child("noise").rng(r as u64));
        let last = traj.states.len() - 1;
        for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
            if k % stride == 0 || k == last {
                rows.push(json!({ "trajectory": r, "time": t, "coeffs": x.coeffs() }));
            }
        }
        let xt = traj.final_state();
        let drift = (xt.mean() - x0.mean()).abs();
        rep.push(ctx.exact("mass_drift", drift).param("trajectory", r as u64).with_pass(drift == 0.0));
        let mut ws = it.workspace();
        let u = sim.spec.potential_reg(sim.n, &it.grid_values(xt, &mut ws));
        rep.push(ctx.exact("final_potential", u).param("trajectory", r as u64));
        rep.push(ctx.exact("final_seminorm_m1", xt.norm_gamma(-1.0).seminorm).param("trajectory", r as u64));
    }
    rep.streams.push(("simulate.trajectory".into(), rows));
    rep.note(format!(
        "{} trajectories of {} steps, dt = {}, spec {}, n = {}",
        ctx.cfg.sim.trajectories,
        sim.steps(),
        sim.dt,
        sim.spec.label(),
        sim.n.get()
    ));
    Ok(Outcome { report: rep, criteria: Vec::new() })
}

fn linear_check(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let mut rep = Report::new(ctx.exp);

    let tr = Transform::new(modes, grid)?;
    let mut rng = ctx.key.child("fields").rng(0);
    let mut worst = [0.0f64; 4];
    let powers = [(0.5, 0.5), (1.0, -0.5), (-1.0, 2.0), (0.25, 0.75), (-0.5, -0.5)];
    for _ in 0..100 {
        let h = random_field(modes, &mut rng)?;
        let mut lhs = h.q_bar().apply_a();
        lhs.coeffs_mut().iter_mut().for_each(|c| *c = -*c);
        worst[0] = worst[0].max(max_abs_diff(&lhs, &h.project_zero_mean()));
        let back = tr.to_spectral(&tr.to_grid(&h)?)?;
        worst[1] = worst[1].max(max_abs_diff(&back, &h));
        for &(a, b) in &powers {
            let l = h.apply_neg_a_pow(a).apply_neg_a_pow(b);
            let r = h.apply_neg_a_pow(a + b);
            worst[2] = worst[2].max(max_abs_diff(&l, &r) / max_abs(&r).max(1.0));
        }
        let mut na = h.apply_a();
        na.coeffs_mut().iter_mut().for_each(|c| *c = -*c);
        worst[3] = worst[3].max(max_abs_diff(&na, &h.apply_neg_a_pow(1.0)) / max_abs(&na).max(1.0));
    }
    let names = ["qbar_identity", "transform_round_trip", "power_composition", "power_one_is_minus_a"];
    for (name, w) in names.iter().zip(worst) {
        rep.push(ctx.exact(name, w).param("fields", 100u64).with_pass(w <= 1e-10));
    }
    let c1 = Criterion::new(
        "1",
        "spectral algebra",
        worst.iter().all(|&w| w <= 1e-10),
        format!("max errors {:.1e} {:.1e} {:.1e} {:.1e} (tol 1e-10, 100 fields)", worst[0], worst[1], worst[2], worst[3]),
    );

    let t = 0.1;
    let dt = 1e-3;
    let cfg = SimConfig::new(modes, grid, dt, t, NonlinSpec::Log, level(1)).with_seed(ctx.seed());
    let it = Integrator::linear(cfg)?;
    let replicas = ctx.size(10_000, 200);
    let zero = SpectralField::zeros(modes);
    let finals = replicate(&ctx.key.child("linear"), replicas, |rng, _| it.evolve(&zero, rng));
    let mut ok = true;
    let mut detail = Vec::new();
    for i in [1usize, 2, 4] {
        let sq: Vec<f64> = finals.iter().map(|x| x.coeffs()[i].powi(2)).collect();
        let est = McEstimate::from_samples(&sq, ctx.seed());
        let target = NoiseModel::variance_of(i, t);
        let z = est.z_score(target);
        let pass = est.within(target, 4.0);
        ok &= pass;
        detail.push(format!("i={i}: {:.6} vs {:.6} (z={z:.2})", est.value, target));
        rep.push(ctx.rec("variance", &est).param("mode", i as u64).param("target", target).param("z", z).with_pass(pass));
    }
    let c2 = Criterion::new("2", "linear law", ok, detail.join(", "));
    Ok(Outcome { report: rep, criteria: vec![c1, c2] })
}

fn contraction(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let c = ctx.cfg.sampler.c;
    let sampler = PathSampler::new(c, modes, grid)?.projected();
    let mut rep = Report::new(ctx.exp);

    let n8 = level(8);
    let mut all_exact = true;
    let specs = [NonlinSpec::Log, power(0.5), power(1.0), power(2.0), power(3.0), power(4.0)];
    for spec in specs {
        let dt = stable_dt(spec, n8, 1e-4);
        let it = Integrator::new(SimConfig::new(modes, grid, dt, 1000.0 * dt, spec, n8).with_mean(c))?;
        let key = ctx.key.child(&format!("mass/{}", spec.label()));
        let mut x = sampler.draw(&mut key.rng(0)).coeffs;
        let bits = x.coeffs()[0].to_bits();
        let mut ws = it.workspace();
        let mut rng = key.rng(1);
        let mut exact = true;
        for _ in 0..1000 {
            it.step(&mut x, &mut ws, &mut rng);
            exact &= x.coeffs()[0].to_bits() == bits;
        }
        all_exact &= exact;
        let drift = (x.coeffs()[0] - f64::from_bits(bits)).abs();
        rep.push(spec_record(ctx.exact("mass_drift", drift), spec).param("steps", 1000u64).param("dt", dt).with_pass(exact));
    }
    let c3 = Criterion::new("3", "mass conservation", all_exact, format!("bit-exact over 1000 steps for {} specs", specs.len()));

    let t = 0.1;
    let bound = contraction_envelope(t) * 1.05;
    let pairs = 8;
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in [NonlinSpec::Log, power(2.0)] {
        let it = Integrator::new(SimConfig::new(modes, grid, 1e-4, t, spec, n8).with_mean(c))?;
        let key = ctx.key.child(&format!("contraction/{}", spec.label()));
        let results = replicate(&key, pairs, |rng, _| -> Result<(f64, bool)> {
            let x0 = sampler.draw(rng).coeffs;
            let y0 = sampler.draw(rng).coeffs;
            let (tx, ty) = it.coupled_simulate(&x0, &y0, rng)?;
            let d: Vec<f64> = tx.states.iter().zip(&ty.states).map(|(x, y)| x.sub(y).norm_gamma(-1.0).seminorm).collect();
            let monotone = d.windows(2).all(|w| w[1] <= w[0]);
            Ok((d[d.len() - 1] / d[0], monotone))
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
        let monotone = results.iter().all(|r| r.1);
        let pass = worst <= bound && monotone;
        ok &= pass;
        detail.push(format!("{}: max ratio {worst:.5}, monotone {monotone}", spec.label()));
        rep.push(
            spec_record(ctx.exact("contraction_ratio", worst), spec)
                .param("bound", bound)
                .param("monotone", monotone)
                .param("pairs", pairs as u64)
                .param("n", 8u32)
                .with_pass(pass),
        );
    }
    let c4 = Criterion::new("4", "contraction", ok, format!("{} (bound {bound:.5})", detail.join(", ")));
    Ok(Outcome { report: rep, criteria: vec![c3, c4] })
}

fn invariant_check(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let c = ctx.cfg.sampler.c;
    let sampler = PathSampler::new(c, modes, grid)?.projected();
    let replicas = ctx.size(ctx.cfg.sampler.replicas, 64);
    let n8 = level(8);
    let horizon = 0.5;
    let mut rep = Report::new(ctx.exp);
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in [NonlinSpec::Log, power(2.0)] {
        let dt = 1e-3f64.min(0.49 / spec.lipschitz(n8));
        let it = Integrator::new(SimConfig::new(modes, grid, dt, horizon, spec, n8).with_mean(c))?;
        let key = ctx.key.child(spec.label().as_str());
        let ens = sampler.sample_nu_reg(spec, n8, &key.child("init"), replicas)?;
        let finals = replicate(&key.child("dynamics"), replicas, |rng, i| it.evolve(&ens.samples[i].coeffs, rng));
        let tr = it.transform();
        let observables: [(&str, Box<dyn Fn(&SpectralField) -> f64>); 3] = [
            ("x1_sq", Box::new(|x: &SpectralField| x.coeffs()[1].powi(2))),
            ("x2_sq", Box::new(|x: &SpectralField| x.coeffs()[2].powi(2))),
            ("potential", Box::new(|x: &SpectralField| spec.potential_reg(n8, &tr.to_grid(x).expect("shapes match")))),
        ];
        for (name, f) in observables {
            let v0: Vec<f64> = ens.samples.iter().map(|s| f(&s.coeffs)).collect();
            let v1: Vec<f64> = finals.iter().map(f).collect();
            let before = ens.weights.estimate(&v0, ctx.seed());
            let after = ens.weights.estimate(&v1, ctx.seed());
            let sigma = before.stderr.hypot(after.stderr);
            let diff = (after.value - before.value).abs();
            let tol = (4.0 * sigma).max(0.05 * before.value.abs());
            let pass = diff <= tol;
            ok &= pass;
            detail.push(format!("{} {name} {:.4}->{:.4}", spec.label(), before.value, after.value));
            rep.push(
                spec_record(ctx.rec(name, &after), spec)
                    .param("initial", before.value)
                    .param("initial_stderr", before.stderr)
                    .param("tolerance", tol)
                    .param("horizon", horizon)
                    .param("dt", dt)
                    .param("n", 8u32)
                    .param("degenerate", ens.is_degenerate())
                    .with_pass(pass),
            );
        }
    }
    let c6 = Criterion::new("6", "invariance of the regularized Gibbs measure", ok, detail.join(", "));
    Ok(Outcome { report: rep, criteria: vec![c6] })
}

/// Functionals for the weak-convergence scan: the grid minimum clipped to
/// `[-1, 1]` and `exp(-‖x‖²)`.
pub fn convergence_functionals() -> Vec<Functional<'static>> {
    vec![
        Functional::new("min_clip", |s: &WeightedSample| s.field.min().clamp(-1.0, 1.0)),
        Functional::new("exp_neg_sq", |s: &WeightedSample| (-s.coeffs.coeffs().iter().map(|c| c * c).sum::<f64>()).exp()),
    ]
}

/// Whether the gaps to the limit row decrease strictly along `n`.
pub fn gaps_strictly_decrease(rows: &[ScanRow], functional: &str) -> (bool, Vec<f64>) {
    let lim = rows.iter().find(|r| r.functional == functional && r.n.is_none()).map(|r| r.estimate);
    let Some(lim) = lim else { return (false, Vec::new()) };
    let gaps: Vec<f64> =
        rows.iter().filter(|r| r.functional == functional && r.n.is_some()).map(|r| (r.estimate - lim).abs()).collect();
    (gaps.windows(2).all(|w| w[1] < w[0]), gaps)
}

fn measures_scan(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let s = &ctx.cfg.sampler;
    let count = ctx.size(s.count, 1000);
    let mut rep = Report::new(ctx.exp);

    let mu = PathSampler::new(s.c, modes, grid)?.sample_mu_c(&ctx.key.child("mu_c"), count);
    let mut c5 = None;
    for i in [1usize, 2] {
        let sq: Vec<f64> = mu.samples.iter().map(|x| x.coeffs.coeffs()[i].powi(2)).collect();
        let est = McEstimate::from_samples(&sq, ctx.seed());
        let target = 1.0 / (i as f64 * PI).powi(2);
        let pass = est.within(target, 4.0);
        rep.push(ctx.rec("mu_c_variance", &est).param("mode", i as u64).param("target", target).param("c", s.c).with_pass(pass));
        if i == 1 {
            c5 = Some(Criterion::new(
                "5",
                "reference Gaussian covariance",
                pass,
                format!("Var<Y,e_1> = {:.5} ± {:.5} vs {target:.5} (z={:.2})", est.value, est.stderr, est.z_score(target)),
            ));
        }
    }

    let sampler = PathSampler::new(s.c, modes, grid)?;
    let n_grid = ctx.cfg.n_grid()?;
    let fs = convergence_functionals();
    let mut specs = vec![s.spec];
    if s.spec != power(2.0) {
        specs.push(power(2.0));
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in specs {
        let key = ctx.key.child(&format!("scan/{}", spec.label()));
        let rows = weak_convergence_scan(&sampler, spec, &fs, &n_grid, s.monitor, &key, count)?;
        for f in &fs {
            let (dec, gaps) = gaps_strictly_decrease(&rows, &f.name);
            ok &= dec;
            detail.push(format!("{} {}: {}", spec.label(), f.name, if dec { "decreasing" } else { "not decreasing" }));
            for (g, n) in gaps.iter().zip(&n_grid) {
                rep.push(spec_record(ctx.exact("gap", *g), spec).param("functional", f.name.clone()).param("n", n.get()));
            }
            rep.push(
                spec_record(ctx.exact("gaps_decreasing", if dec { 1.0 } else { 0.0 }), spec)
                    .param("functional", f.name.clone())
                    .with_pass(dec),
            );
        }
        for r in &rows {
            let est = McEstimate { value: r.estimate, stderr: r.stderr, ess: r.ess, count, seed: r.seed };
            let mut rec = spec_record(ctx.rec("expectation", &est), spec).param("functional", r.functional.clone());
            if let Some(n) = r.n {
                rec = rec.param("n", n);
            }
            rep.push(rec.param("degenerate", r.ess < crate::measures::DEGENERATE_ESS));
        }
        rep.tables.push(Table::from_rows(&format!("measures_scan_{}", spec.label()), &rows)?);
    }
    let c7 = Criterion::new("7", "weak convergence", ok, detail.join(", "));
    Ok(Outcome { report: rep, criteria: vec![c5.expect("mode 1 is checked"), c7] })
}

fn meander_test(ctx: &Ctx) -> Result<Outcome> {
    let mut rep = Report::new(ctx.exp);
    let count = ctx.size(100_000, 2000);

    let ends = replicate(&ctx.key.child("endpoint"), count, |rng, _| {
        let m = sample_meander_at(&[], rng);
        (m.endpoint(), m.weight())
    });
    let ks = ks_weighted_vs_cdf(&ends, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-0.5 * x * x).exp() });
    rep.push(
        ctx.exact("ks_endpoint_rayleigh", ks.statistic)
            .param("effective_n", ks.effective_n)
            .param("critical", ks.critical)
            .with_pass(ks.pass),
    );

    let v = v_tau_law_check(&ctx.key.child("v_tau"), count, 256);
    for (t, (a, d)) in v.thetas.iter().zip(v.ks_analytic.iter().zip(&v.ks_direct)) {
        rep.push(ctx.exact("ks_v_tau_vs_normal", a.statistic).param("theta", *t).param("critical", a.critical).with_pass(a.pass));
        rep.push(ctx.exact("ks_v_tau_vs_direct", d.statistic).param("theta", *t).param("critical", d.critical).with_pass(d.pass));
    }
    let cov_pass = v.covariance.within(0.25, 4.0);
    rep.push(ctx.rec("v_tau_covariance", &v.covariance).param("target", 0.25).with_pass(cov_pass));

    let steps = 64;
    let rej_count = ctx.size(20_000, 500);
    let eps = 0.01;
    let imhof = replicate(&ctx.key.child("imhof"), count, |rng, _| {
        let m = sample_meander(steps, rng).expect("grid has enough steps");
        (m.weight() * m.endpoint(), m.weight() * m.integral())
    });
    let rej = replicate(&ctx.key.child("rejection"), rej_count, |rng, _| {
        let m = sample_meander_rejection(steps, eps, rng);
        (m.endpoint(), m.integral())
    });
    let mut cross = true;
    let mut cross_detail = Vec::new();
    for (k, name) in ["endpoint_mean", "integral_mean"].iter().enumerate() {
        let pick = |p: &(f64, f64)| if k == 0 { p.0 } else { p.1 };
        let a = McEstimate::from_samples(&imhof.iter().map(pick).collect::<Vec<_>>(), ctx.seed());
        let b = McEstimate::from_samples(&rej.iter().map(pick).collect::<Vec<_>>(), ctx.seed());
        let z = (a.value - b.value) / a.stderr.hypot(b.stderr);
        let pass = z.abs() <= 4.0;
        cross &= pass;
        cross_detail.push(format!("{name} z={z:.2}"));
        rep.push(
            ctx.rec(name, &a)
                .param("rejection", b.value)
                .param("rejection_stderr", b.stderr)
                .param("rejection_count", rej_count as u64)
                .param("start", eps)
                .param("z", z)
                .with_pass(pass),
        );
    }
    let e1 = McEstimate::from_samples(&imhof.iter().map(|p| p.0).collect::<Vec<_>>(), ctx.seed());
    // The Imhof weight makes `w·M(1)` the constant `√(π/2)`.
    let target = (PI / 2.0).sqrt();
    let exact = (e1.value - target).abs() <= 1e-12 * target + 4.0 * e1.stderr;
    rep.push(ctx.rec("endpoint_mean_exact", &e1).param("target", target).with_pass(exact));

    let v_pass = v.ks_analytic.iter().chain(&v.ks_direct).all(|r| r.pass);
    let pass = ks.pass && v_pass && cross;
    let c8 = Criterion::new(
        "8",
        "meander laws",
        pass,
        format!(
            "endpoint KS {:.4}/{:.4}, V_tau KS {}, {}",
            ks.statistic,
            ks.critical,
            if v_pass { "pass" } else { "fail" },
            cross_detail.join(", ")
        ),
    );
    Ok(Outcome { report: rep, criteria: vec![c8] })
}

fn ibp_verify(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let v = &ctx.cfg.verification;
    let c = ctx.cfg.sampler.c;
    let count = ctx.size(ctx.cfg.sampler.count, 1000);
    let boundary = v.boundary(ctx.cfg.scale());
    let mut rep = Report::new(ctx.exp);
    let sampler = PathSampler::new(c, modes, grid)?;
    let pairs: Vec<(TestFunctional, SpectralField)> = v
        .gibbs_pairs
        .iter()
        .map(|p| Ok((p.phi.build(modes)?, SpectralField::unit(modes, p.direction))))
        .collect::<Result<_>>()?;

    let mut gibbs_ok = true;
    let mut gibbs_n = 0;
    for (spec, n) in [(NonlinSpec::Log, level(4)), (power(2.0), level(8))] {
        let ens = sampler.sample_nu_reg(spec, n, &ctx.key.child(&format!("gibbs/{}", spec.label())), count)?;
        for (phi, h) in &pairs {
            let r = ibp_gibbs_reg(phi, h, spec, n, &ens)?;
            gibbs_ok &= r.pass;
            gibbs_n += 1;
            rep.push(ibp_record(ctx, "gibbs_regularized", &r, Some(spec), Some(n)));
        }
        let profile = boundary_integrand_profile(spec, n, &ens);
        let min = profile.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let mut r = spec_record(ctx.exact("boundary_integrand_min", min), spec).param("n", n.get());
        if spec.alpha().is_some() {
            r = r.with_pass(min > 0.0);
        }
        rep.push(r);
    }

    let mut unc_ok = true;
    let mut unc_n = 0;
    for (k, p) in v.unconditioned_pairs.iter().enumerate() {
        let phi = p.phi.build(modes)?;
        let h = SpectralField::unit(modes, p.direction);
        let r = ibp_unconditioned(&phi, &h, ctx.res(), &boundary, &ctx.key.child_index(k as u64), count)?;
        unc_ok &= r.pass;
        unc_n += 1;
        rep.push(ibp_record(ctx, "unconditioned", &r, None, None));
    }
    let c9 = Criterion::new(
        "9",
        "integration by parts closure",
        gibbs_ok && unc_ok && gibbs_n >= 6 && unc_n >= 3,
        format!(
            "regularized {}/{gibbs_n}, unconditioned {}/{unc_n}",
            rep.records.iter().filter(|r| r.param_str("formula") == Some("gibbs_regularized") && r.pass == Some(true)).count(),
            rep.records.iter().filter(|r| r.param_str("formula") == Some("unconditioned") && r.pass == Some(true)).count()
        ),
    );

    for spec in [NonlinSpec::Log, power(4.0)] {
        let ens = sampler.sample_nu_limit(spec, KMonitor::Bridge, &ctx.key.child(&format!("limit/{}", spec.label())), count)?;
        for (k, (phi, h)) in pairs.iter().take(2).enumerate() {
            let key = ctx.key.child(&format!("limit/{}/{k}", spec.label()));
            let r = ibp_limit(phi, h, spec, c, &ens, &boundary, &key)?;
            rep.push(ibp_record(ctx, "limit", &r, Some(spec), None));
            if spec.alpha().is_some_and(|a| a >= 3.0) {
                let b = r.rhs_boundary;
                let pass = b.value.abs() <= 3.0 * r.sigma_combined;
                rep.push(
                    spec_record(ctx.rec("limit_boundary", &b), spec)
                        .param("pair", r.label.clone())
                        .param("identity_sigma", r.sigma_combined)
                        .with_pass(pass),
                );
            }
        }
    }
    {
        let (phi, h) = &pairs[0];
        let n = level(4);
        let r = boundary_cross_check(phi, h, NonlinSpec::Log, n, &sampler, count, &boundary, &ctx.key.child("cross"))?;
        let pass = r.z() <= 4.0;
        rep.push(ibp_record(ctx, "boundary_cross_check", &r, Some(NonlinSpec::Log), Some(n)).with_pass(pass));
    }

    let mut gen_ok = true;
    let mut detail = Vec::new();
    let mut x = vec![0.0; modes];
    x[..4].copy_from_slice(&[c, 0.2, -0.1, 0.05]);
    let x = SpectralField::new(x)?;
    for (spec, n) in [(NonlinSpec::Log, level(4)), (power(2.0), level(4))] {
        for dir in [1usize, 2] {
            let h = SpectralField::unit(modes, dir);
            let g = generator_quotient(&h, &x, spec, n, grid, &v.generator_dts)?;
            gen_ok &= g.pass;
            detail.push(format!("{} e_{dir} slope {:.3}", spec.label(), g.slope));
            rep.push(
                spec_record(ctx.exact("generator_slope", g.slope), spec)
                    .param("direction", dir as u64)
                    .param("n", n.get())
                    .param("errors", g.errors.clone())
                    .param("dts", g.dts.clone())
                    .with_pass(g.pass),
            );
        }
    }
    let n4 = level(4);
    let proj = PathSampler::new(c, modes, grid)?.projected();
    let ens = proj.sample_nu_reg(NonlinSpec::Log, n4, &ctx.key.child("symmetry"), count)?;
    let e1 = SpectralField::unit(modes, 1);
    let e2 = SpectralField::unit(modes, 2);
    let sym_pairs = [
        (TestFunctional::CosInner(e1.clone()), TestFunctional::SinInner(e1.clone())),
        (TestFunctional::CosInner(e1.clone()), TestFunctional::CosInner(e1.clone())),
        (TestFunctional::SinInner(e2.clone()), TestFunctional::CosInner(e1)),
    ];
    for (phi, psi) in &sym_pairs {
        let s = symmetry_check(phi, psi, NonlinSpec::Log, n4, &ens)?;
        let diagonal = phi.label() == psi.label();
        let pass = s.pass && (!diagonal || s.rhs.value <= 0.0);
        gen_ok &= pass;
        detail.push(format!("{} z={:.2}", s.label, s.z));
        rep.push(
            ctx.rec("symmetry_lhs", &s.lhs)
                .param("pair", s.label.clone())
                .param("rhs", s.rhs.value)
                .param("rhs_stderr", s.rhs.stderr)
                .param("z", s.z)
                .param("spec", "log")
                .param("n", 4u32)
                .with_pass(pass),
        );
    }
    let c10 = Criterion::new("10", "generator and symmetry", gen_ok, detail.join(", "));
    Ok(Outcome { report: rep, criteria: vec![c9, c10] })
}

/// Row with `statistic` for `spec` at level `n` (`None` for the limit).
fn cell<'a>(cells: &'a [ScanCell], spec: NonlinSpec, n: Option<u32>, statistic: &str) -> Option<&'a ScanCell> {
    cells.iter().find(|c| c.spec == spec.label() && c.n == n && c.statistic == statistic)
}

fn z_of(c: &ScanCell) -> f64 {
    if c.stderr == 0.0 {
        if c.estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        c.estimate / c.stderr
    }
}

fn defect_verdicts(cells: &[ScanCell], direction: &str, vanishing: &[NonlinSpec], nonvanishing: &[NonlinSpec]) -> (bool, Vec<String>) {
    let stat = format!("defect_{direction}");
    let mut ok = true;
    let mut detail = Vec::new();
    for (specs, want_zero) in [(vanishing, true), (nonvanishing, false)] {
        for &spec in specs {
            let Some(d) = cell(cells, spec, None, &stat) else {
                ok = false;
                continue;
            };
            let z = z_of(d).abs();
            let pass = if want_zero { z <= 3.0 } else { z >= 5.0 };
            ok &= pass;
            detail.push(format!("{} D={:.4}±{:.4} ({z:.1}σ)", spec.label(), d.estimate, d.stderr));
        }
    }
    (ok, detail)
}

fn reflection_scan(ctx: &Ctx) -> Result<Outcome> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let s = &ctx.cfg.sampler;
    let count = ctx.size(s.count, 1000);
    let n_grid = ctx.cfg.n_grid()?;
    let mut rep = Report::new(ctx.exp);
    let (log, a1, a4) = (NonlinSpec::Log, power(1.0), power(4.0));

    let mut specs = vec![log];
    for sp in ctx.cfg.alpha_specs()?.into_iter().chain([a1, a4]) {
        if !specs.contains(&sp) {
            specs.push(sp);
        }
    }
    let dirs: Vec<(String, SpectralField)> =
        [1usize, 2].iter().map(|&i| (format!("e{i}"), SpectralField::unit(modes, i))).collect();
    let monitors = ScanMonitors { gap: s.monitor, defect: KMonitor::Bridge };
    let sampler = PathSampler::new(s.c, modes, grid)?;
    let mut cells = threshold_scan(&specs, &n_grid, &dirs, &sampler, monitors, &ctx.key.child("threshold"), count)?;

    let j_count = ctx.size(s.count, 1000);
    for &spec in &specs {
        for &n in &n_grid {
            let j = j_r_n(0.5, spec, n, grid, &ctx.key.child("j"), j_count)?;
            cells.push(ScanCell::new(spec, Some(n.get()), "j_half", j));
        }
    }

    let (d_ok, mut detail) = defect_verdicts(&cells, "e1", &[a4], &[a1, log]);
    let js = |spec: NonlinSpec| -> Vec<f64> {
        n_grid.iter().filter_map(|n| cell(&cells, spec, Some(n.get()), "j_half")).map(|c| c.estimate).collect()
    };
    let j4 = js(a4);
    let j1 = js(a1);
    let j4_ok = j4.windows(2).all(|w| w[1] < w[0]) && j4[j4.len() - 1] < 0.5 * j4[0];
    let j1_ok = j1[j1.len() - 1] >= 0.5 * j1[0] && (j1[j1.len() - 1] / j1[j1.len() - 2] - 1.0).abs() <= 0.1;
    detail.push(format!("J(α=4) {:.4}->{:.4}", j4[0], j4[j4.len() - 1]));
    detail.push(format!("J(α=1) {:.4}->{:.4}", j1[0], j1[j1.len() - 1]));
    rep.push(ctx.exact("j_alpha4_vanishing", j4[j4.len() - 1] / j4[0]).with_pass(j4_ok));
    rep.push(ctx.exact("j_alpha1_plateau", j1[j1.len() - 1] / j1[0]).with_pass(j1_ok));
    for (spec, name) in [(a4, "defect_e1_alpha4_vanishing"), (a1, "defect_e1_alpha1_nonvanishing"), (log, "defect_e1_log_nonvanishing")] {
        let (ok, _) = if spec == a4 {
            defect_verdicts(&cells, "e1", &[spec], &[])
        } else {
            defect_verdicts(&cells, "e1", &[], &[spec])
        };
        let d = cell(&cells, spec, None, "defect_e1").expect("scanned");
        rep.push(spec_record(ResultRecord::new(ctx.exp, &cell_estimate(d, count)), spec).param("statistic", name).param("c", s.c).with_pass(ok));
    }
    let c12 = Criterion::new("12", "threshold", d_ok && j4_ok && j1_ok, format!("c={}: {}", s.c, detail.join(", ")));

    let low = 1.0;
    let sampler1 = PathSampler::new(low, modes, grid)?;
    let supp_specs = [log, a1, power(2.0), a4];
    let supp = threshold_scan(&supp_specs, &n_grid, &dirs, &sampler1, monitors, &ctx.key.child("threshold_c1"), count)?;
    let (s_ok, s_detail) = defect_verdicts(&supp, "e2", &[a4], &[a1, log]);
    let order = ["defect_e2"]
        .iter()
        .all(|st| {
            let m = |sp| cell(&supp, sp, None, st).map(|c| c.estimate.abs()).unwrap_or(f64::NAN);
            m(a4) < m(power(2.0)) && m(power(2.0)) < m(a1)
        });
    let n_last = n_grid.last().map(|n| n.get());
    let gap1 = cell(&supp, a1, n_last, "gap").expect("scanned");
    let gap_ok = z_of(gap1) >= 5.0;
    rep.push(ctx.exact("defect_e2_ordered_in_alpha", if order { 1.0 } else { 0.0 }).param("c", low).with_pass(order));
    rep.push(
        spec_record(ResultRecord::new(ctx.exp, &cell_estimate(gap1, count)), a1)
            .param("statistic", "gap_nonvanishing")
            .param("c", low)
            .param("n", n_last.unwrap_or(0))
            .with_pass(gap_ok),
    );
    let c12s = Criterion::new(
        "12s",
        "threshold, supplementary (c = 1, k = e_2)",
        s_ok && gap_ok,
        format!("{}, gap(α=1, n={}) {:.4}±{:.4}", s_detail.join(", "), n_last.unwrap_or(0), gap1.estimate, gap1.stderr),
    );

    let (c11, contact_cells) = contact_study(ctx, &mut rep, low)?;
    let mut table = cells.clone();
    table.extend(supp.iter().map(|c| ScanCell { statistic: format!("{}@c={low}", c.statistic), ..c.clone() }));
    table.extend(contact_cells);
    for c in &table {
        let mut r = ResultRecord::new(ctx.exp, &cell_estimate(c, count)).param("statistic", c.statistic.clone()).param("spec", c.spec.clone());
        if let Some(a) = c.alpha {
            r = r.param("alpha", a);
        }
        if let Some(n) = c.n {
            r = r.param("n", n);
        }
        rep.push(r);
    }
    rep.tables.push(Table::from_rows("reflection_scan", &table)?);
    rep.documents.push((
        "reflection_scan.summary".into(),
        json!({
            "c": s.c,
            "alpha4_vanishing": rep.flag("defect_e1_alpha4_vanishing"),
            "alpha1_nonvanishing": rep.flag("defect_e1_alpha1_nonvanishing"),
            "log_nonvanishing": rep.flag("defect_e1_log_nonvanishing"),
            "j_alpha4_vanishing": j4_ok,
            "j_alpha1_plateau": j1_ok,
            "supplementary_c": low,
            "supplementary_pass": c12s.pass,
            "defect_ordered_in_alpha": order,
            "contact_bounds": c11.pass,
        }),
    ));
    Ok(Outcome { report: rep, criteria: vec![c11, c12, c12s] })
}

fn cell_estimate(c: &ScanCell, count: usize) -> McEstimate {
    McEstimate { value: c.estimate, stderr: c.stderr, ess: c.ess, count, seed: c.seed }
}

/// Contact statistics and penalization masses along stationary runs at
/// mean level `c`, level `n = max(n_grid)`, horizon 1.
fn contact_study(ctx: &Ctx, rep: &mut Report, c: f64) -> Result<(Criterion, Vec<ScanCell>)> {
    let (modes, grid) = (ctx.modes(), ctx.grid());
    let n_max = *ctx.cfg.n_grid()?.iter().max().expect("n_grid is not empty");
    let replicas = ctx.size(200, 8);
    let count = ctx.size(ctx.cfg.sampler.count, 1000);
    let horizon = 1.0;
    let eps = [0.005, 0.01, 0.02];
    let windows = [(0.25, 0.5), (0.5, 0.75)];
    let sampler = PathSampler::new(c, modes, grid)?.projected();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut cells = Vec::new();
    for spec in [NonlinSpec::Log, power(0.5), power(2.0)] {
        let weight = if spec.alpha().is_some_and(|a| a >= 1.0) { ContactWeight::Power { gamma: 1.0 } } else { ContactWeight::Linear };
        // The α = 2 run is reported only; at large n its stable step is below 1e-6.
        let n = if spec.alpha().is_some_and(|a| a >= 1.0) { n_max.min(RegLevel::new(8)?) } else { n_max };
        let dt = stable_dt(spec, n, 1e-3);
        let it = Integrator::new(SimConfig::new(modes, grid, dt, horizon, spec, n).with_mean(c))?;
        let key = ctx.key.child(&format!("contact/{}", spec.label()));
        let ens = sampler.sample_nu_reg(spec, n, &key.child("init"), replicas)?;
        let (w, runs) = stationary_run_summaries(&it, &ens, &key.child("runs"), replicas, &windows, &eps, weight);
        let mut prev = f64::NEG_INFINITY;
        let mut monotone = true;
        for (k, &e) in eps.iter().enumerate() {
            let vals: Vec<f64> = runs.iter().map(|r| r.contact[k]).collect();
            let est = w.estimate(&vals, ctx.seed());
            let bound = weight.bound(spec, e, horizon);
            monotone &= est.value >= prev - 3.0 * est.stderr;
            prev = est.value;
            let pass = est.value <= bound + 3.0 * est.stderr;
            let mut r = spec_record(ctx.rec("contact", &est), spec).param("eps", e).param("bound", bound).param("n", n.get()).param("c", c);
            if e == 0.01 {
                r = r.with_pass(pass);
                if spec.alpha().is_none_or(|a| a < 1.0) {
                    ok &= pass;
                }
                detail.push(format!("{} {:.5}±{:.5} <= {bound:.5}", spec.label(), est.value, est.stderr));
            }
            rep.push(r);
            cells.push(ScanCell::new(spec, Some(n.get()), format!("contact_eps{e}@c={c}"), est));
        }
        rep.push(spec_record(ctx.exact("contact_monotone_in_eps", if monotone { 1.0 } else { 0.0 }), spec).with_pass(monotone));

        let masses: Vec<McEstimate> = (0..windows.len())
            .map(|k| w.estimate(&runs.iter().map(|r| r.window_masses[k]).collect::<Vec<_>>(), ctx.seed()))
            .collect();
        let big = sampler.sample_nu_reg(spec, n, &key.child("reference"), count)?;
        let fm = stationary_f_mass(spec, n, &big);
        let z_windows = (masses[0].value - masses[1].value) / masses[0].stderr.hypot(masses[1].stderr);
        let width = windows[0].1 - windows[0].0;
        let target = fm.scale(width);
        let z_ref = (masses[0].value - target.value) / masses[0].stderr.hypot(target.stderr);
        rep.push(
            spec_record(ctx.rec("penalization_mass", &masses[0]), spec)
                .param("window", format!("{:?}", windows[0]))
                .param("other_window", masses[1].value)
                .param("z_windows", z_windows)
                .param("stationary_target", target.value)
                .param("z_target", z_ref)
                .with_pass(z_windows.abs() <= 4.0 && z_ref.abs() <= 4.0),
        );
        cells.push(ScanCell::new(spec, Some(n.get()), format!("penalization_mass@c={c}"), masses[0]));
    }
    let crit = Criterion::new("11", "contact bounds", ok, format!("eps=0.01, T=1, c={c}: {}", detail.join(", ")));
    Ok((crit, cells))
}
