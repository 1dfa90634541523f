use proptest::prelude::*;
use schlab_core::measures::PathSampler;
use schlab_core::rng::replicate;
use schlab_core::stats::{pairwise_sum, Weights};
use schlab_core::{Integrator, NonlinSpec, RegLevel, SimConfig, SpectralField, StreamKey, Transform};

fn field(modes: usize) -> impl Strategy<Value = SpectralField> {
    prop::collection::vec(-2.0f64..2.0, modes).prop_map(|v| SpectralField::new(v).unwrap())
}

fn spec() -> impl Strategy<Value = NonlinSpec> {
    prop_oneof![Just(NonlinSpec::Log), (0.25f64..5.0).prop_map(|a| NonlinSpec::power(a).unwrap())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip(h in field(16)) {
        let t = Transform::new(16, 48).unwrap();
        let back = t.to_spectral(&t.to_grid(&h).unwrap()).unwrap();
        for (a, b) in back.coeffs().iter().zip(h.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn qbar_inverts_minus_a_on_zero_mean(h in field(12)) {
        let lhs = h.q_bar().apply_a();
        let ph = h.project_zero_mean();
        for (a, b) in lhs.coeffs().iter().zip(ph.coeffs()) {
            prop_assert!((a + b).abs() <= 1e-12);
        }
    }

    #[test]
    fn integrator_conserves_mass(h in field(8), s in spec(), n in 1u32..16, seed in any::<u64>()) {
        let n = RegLevel::new(n).unwrap();
        let dt = 1e-3f64.min(0.4 / s.lipschitz(n));
        let it = Integrator::new(SimConfig::new(8, 16, dt, 20.0 * dt, s, n)).unwrap();
        let x = it.evolve(&h, &mut StreamKey::new(seed).rng(0));
        prop_assert_eq!(x.coeffs()[0].to_bits(), h.coeffs()[0].to_bits());
        prop_assert!(x.coeffs().iter().all(|c| c.is_finite()));
    }

    #[test]
    fn regularized_drift_is_nonincreasing(s in spec(), n in 1u32..64, a in -3.0f64..3.0, d in 0.0f64..3.0) {
        let n = RegLevel::new(n).unwrap();
        prop_assert!(s.f_reg(n, a + d) <= s.f_reg(n, a));
        prop_assert!(s.lipschitz(n) * d + 1e-9 * s.lipschitz(n) >= s.f_reg(n, a) - s.f_reg(n, a + d));
    }

    #[test]
    fn ess_is_between_one_and_count(lw in prop::collection::vec(-30.0f64..30.0, 1..200)) {
        let w = Weights::from_log(&lw);
        let e = w.ess();
        prop_assert!(e >= 1.0 - 1e-9 && e <= lw.len() as f64 + 1e-9);
    }

    #[test]
    fn pairwise_sum_matches_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..500)) {
        let naive: f64 = xs.iter().sum();
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + xs.iter().map(|x| x.abs()).sum::<f64>()));
    }

    #[test]
    fn mu_c_draws_have_the_requested_mean(c in -3.0f64..3.0, seed in any::<u64>()) {
        let s = PathSampler::new(c, 8, 16).unwrap();
        let x = s.draw(&mut StreamKey::new(seed).rng(3));
        prop_assert!((x.field.mean() - c).abs() <= 1e-12);
        prop_assert_eq!(x.coeffs.coeffs()[0], c);
    }
}

#[test]
fn replicate_ignores_the_pool_size() {
    let key = StreamKey::new(9);
    let run = |t: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
        pool.install(|| replicate(&key, 257, |rng, i| rand::Rng::random::<f64>(rng) + i as f64))
    };
    assert_eq!(run(1), run(4));
}
