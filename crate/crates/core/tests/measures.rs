use std::f64::consts::PI;

use schlab_core::measures::{KMonitor, PathSampler};
use schlab_core::{McEstimate, NonlinSpec, RegLevel, StreamKey};

#[test]
fn reference_covariance() {
    let s = PathSampler::new(1.0, 32, 64).unwrap();
    let ens = s.sample_mu_c(&StreamKey::new(41), 40_000);
    let v: Vec<f64> = ens.samples.iter().map(|x| x.coeffs.coeffs()[1].powi(2)).collect();
    let est = McEstimate::from_samples(&v, 41);
    assert!(est.within(1.0 / (PI * PI), 4.0), "{est:?}");
}

#[test]
fn metropolis_agrees_with_importance_sampling() {
    let s = PathSampler::new(2.0, 32, 64).unwrap();
    let n = RegLevel::new(8).unwrap();
    let key = StreamKey::new(42);
    let phi = |w: &schlab_core::measures::WeightedSample| w.field.min().clamp(-1.0, 1.0);
    let is = s.sample_nu_reg(NonlinSpec::Log, n, &key.child("is"), 40_000).unwrap().expect(phi);
    let mh = s.metropolis_nu_reg(NonlinSpec::Log, n, &key.child("mh"), 32, 1500, 300, phi);
    let z = (is.value - mh.value) / is.stderr.hypot(mh.stderr);
    assert!(z.abs() <= 4.0, "{is:?} vs {mh:?}");
}

#[test]
fn limit_ensemble_lives_on_the_cone() {
    let s = PathSampler::new(2.0, 16, 32).unwrap();
    let ens = s.sample_nu_limit(NonlinSpec::Log, KMonitor::Grid, &StreamKey::new(43), 2000).unwrap();
    let off = ens.expect(|w| if w.field.min() < 0.0 { 1.0 } else { 0.0 });
    assert_eq!(off.value, 0.0);
    assert!(!ens.is_degenerate());
}
