use avlab_core::detection::*;
use avlab_core::dynamics::{AttackSignal, NoiseModel};
use avlab_core::environment::{baseline_episode, AttackEnv, EnvConfig};
use avlab_core::estimation::Residue;
use avlab_core::metrics::flag_rate;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn quantiles_agree_with_reference_implementation() {
    for dof in 1..=6u32 {
        let reference = ChiSquared::new(f64::from(dof)).unwrap();
        for p in [0.01, 0.05, 0.5, 0.9, 0.95, 0.99, 0.999] {
            let q = chi2_quantile(p, dof).unwrap();
            let expected = reference.inverse_cdf(p);
            assert!((q - expected).abs() < 1e-6 * expected.max(1.0), "dof {dof} p {p}: {q} vs {expected}");
            assert!((reference.cdf(q) - p).abs() < 1e-9);
        }
    }
}

#[test]
fn cdf_agrees_with_reference_implementation() {
    for dof in 1..=5u32 {
        let reference = ChiSquared::new(f64::from(dof)).unwrap();
        for x in [0.01, 0.3, 1.0, 2.5, 7.8, 15.0, 40.0] {
            assert!((chi2_cdf(x, dof) - reference.cdf(x)).abs() < 1e-10, "dof {dof} x {x}");
        }
    }
}

#[test]
fn no_attack_flag_rate_is_calibrated() {
    let traces: Vec<_> = (0..10u64).map(|seed| baseline_episode(&EnvConfig::default(), seed).unwrap()).collect();
    let rate = flag_rate(&traces).unwrap();
    assert!((0.02..=0.08).contains(&rate), "flag rate {rate}");
}

#[test]
fn noiseless_loop_never_flags() {
    let cfg = EnvConfig { noise: NoiseModel::noiseless(0), initial_variance: 0.0, ..EnvConfig::default() };
    let mut env = AttackEnv::new(cfg).unwrap();
    env.reset(0).unwrap();
    while !env.is_done() {
        assert!(!env.step(AttackSignal::ZERO).unwrap().verdict.flagged);
    }
}

proptest! {
    #[test]
    fn verdict_is_deterministic(r in prop::array::uniform3(-1.0..1.0f64), d in prop::array::uniform3(1e-3..1.0f64)) {
        let cov = Matrix3::from_diagonal(&Vector3::from(d));
        let res = Residue(Vector3::from(r));
        let mut a = Detector::new(DetectorConfig::default()).unwrap();
        let mut b = Detector::new(DetectorConfig::default()).unwrap();
        prop_assert_eq!(a.observe(&res, &cov).unwrap(), b.observe(&res, &cov).unwrap());
    }
}
