use schlab_core::measures::{KMonitor, PathSampler};
use schlab_core::reflection::{ibp_defect, stationary_f_mass, stationary_run_summaries, ContactWeight};
use schlab_core::{Integrator, McEstimate, NonlinSpec, RegLevel, SimConfig, SpectralField, StreamKey};

/// Started from `ν_c^n` the mean penalization mass over `[s, t]` is
/// `(t - s)` times its stationary value.
#[test]
fn penalization_mass_is_stationary() {
    let spec = NonlinSpec::Log;
    let n = RegLevel::new(4).unwrap();
    let s = PathSampler::new(1.0, 16, 32).unwrap();
    let key = StreamKey::new(61);
    let ens = s.sample_nu_reg(spec, n, &key.child("ens"), 4000).unwrap();
    let it = Integrator::new(SimConfig::new(16, 32, 1e-3, 0.2, spec, n).with_mean(1.0)).unwrap();
    let windows = [(0.0, 0.1), (0.1, 0.2)];
    let (w, runs) = stationary_run_summaries(&it, &ens, &key.child("runs"), 400, &windows, &[0.01], ContactWeight::Linear);
    let target = stationary_f_mass(spec, n, &ens).scale(0.1);
    for k in 0..windows.len() {
        let vals: Vec<f64> = runs.iter().map(|r| r.window_masses[k]).collect();
        let est = w.estimate(&vals, 61);
        let z = (est.value - target.value) / est.stderr.hypot(target.stderr);
        assert!(z.abs() <= 4.0, "window {k}: {est:?} vs {target:?}");
    }
}

/// The reflection `θ ↦ 1 - θ` leaves the limit measure invariant and flips
/// the sign of the pairing with `e1`.
#[test]
fn defect_along_e1_vanishes() {
    let s = PathSampler::new(1.0, 16, 32).unwrap();
    let ens = s.sample_nu_limit(NonlinSpec::power(1.0).unwrap(), KMonitor::Bridge, &StreamKey::new(62), 20_000).unwrap();
    let d = ibp_defect(&SpectralField::unit(16, 1), NonlinSpec::power(1.0).unwrap(), &ens).unwrap();
    assert!(d.within(0.0, 4.0), "{d:?}");
}

#[test]
fn constant_direction_has_no_defect() {
    let s = PathSampler::new(1.0, 8, 16).unwrap();
    let ens = s.sample_nu_limit(NonlinSpec::Log, KMonitor::Bridge, &StreamKey::new(63), 100).unwrap();
    let d: McEstimate = ibp_defect(&SpectralField::unit(8, 0), NonlinSpec::Log, &ens).unwrap();
    assert_eq!((d.value, d.stderr), (0.0, 0.0));
}
