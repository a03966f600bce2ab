use std::f64::consts::PI;

use avlab_core::dynamics::*;
use nalgebra::{Matrix2x3, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> VehicleParams {
    VehicleParams::default()
}

proptest! {
    #[test]
    fn heading_stays_wrapped(
        x in -50.0..50.0f64, y in -50.0..50.0f64, th in -20.0..20.0f64,
        v in -5.0..5.0f64, phi in -2.0..2.0f64,
        vd in -3.0..3.0f64, pd in -1.0..1.0f64, wt in -1.0..1.0f64,
    ) {
        let s = VehicleState::new(x, y, th);
        prop_assert!(s.theta > -PI && s.theta <= PI);
        let w = Vector3::new(0.0, 0.0, wt);
        let n = step(&s, ControlInput::new(v, phi), AttackSignal::new(vd, pd), &w, &params()).unwrap();
        prop_assert!(n.theta > -PI && n.theta <= PI);
    }

    #[test]
    fn attack_is_additive_inside_limits(
        x in -20.0..20.0f64, y in -20.0..20.0f64, th in -3.0..3.0f64,
        v in 0.0..1.0f64, phi in -0.35..0.35f64,
        vd in 0.0..1.0f64, pd in -0.4..0.4f64,
    ) {
        let s = VehicleState::new(x, y, th);
        let w = Vector3::zeros();
        let attacked = step(&s, ControlInput::new(v, phi), AttackSignal::new(vd, pd), &w, &params()).unwrap();
        let merged = step(&s, ControlInput::new(v + vd, phi + pd), AttackSignal::ZERO, &w, &params()).unwrap();
        prop_assert_eq!(attacked, merged);
    }

    #[test]
    fn stepping_is_bitwise_deterministic(seed in any::<u64>(), v in 0.0..2.0f64, phi in -0.7..0.7f64) {
        let model = NoiseModel::default();
        let run = || {
            let mut sampler = NoiseSampler::with_seed(&model, seed);
            let mut s = VehicleState::new(1.0, -2.0, 0.3);
            for _ in 0..20 {
                s = step(&s, ControlInput::new(v, phi), AttackSignal::ZERO, &sampler.process(), &params()).unwrap();
            }
            s
        };
        prop_assert_eq!(run(), run());
    }
}

fn rel_err3(fd: &Matrix3<f64>, an: &Matrix3<f64>) -> f64 {
    (fd - an).norm() / an.norm().max(1e-12)
}

#[test]
fn transition_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let p = params();
    let h = 1e-6;
    let zero = Vector3::zeros();
    for _ in 0..100 {
        let s = VehicleState::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-PI..PI));
        let u = ControlInput::new(rng.random_range(0.0..2.0), rng.random_range(-0.7..0.7));
        let an = jacobian_f_state(&s, u, &p);
        let mut fd = Matrix3::zeros();
        for j in 0..3 {
            let mut plus = s.to_vector();
            plus[j] += h;
            let mut minus = s.to_vector();
            minus[j] -= h;
            let fp = step(&VehicleState::from_vector(&plus), u, AttackSignal::ZERO, &zero, &p).unwrap();
            let fm = step(&VehicleState::from_vector(&minus), u, AttackSignal::ZERO, &zero, &p).unwrap();
            fd.set_column(j, &(fp.difference(&fm) / (2.0 * h)));
        }
        assert!(rel_err3(&fd, &an) < 1e-6, "state {s:?}: {fd} vs {an}");
    }
}

#[test]
fn measurement_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let lm = Landmark::new(2.0, -1.0);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 100 {
        let s = VehicleState::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-PI..PI));
        if (s.x - lm.x).hypot(s.y - lm.y) < 0.5 {
            continue;
        }
        let an = jacobian_g_state(&s, &lm).unwrap();
        let mut fd = Matrix2x3::zeros();
        for j in 0..3 {
            let mut plus = s.to_vector();
            plus[j] += h;
            let mut minus = s.to_vector();
            minus[j] -= h;
            let zp = predicted_measurement(&VehicleState::from_vector(&plus), &lm).unwrap();
            let zm = predicted_measurement(&VehicleState::from_vector(&minus), &lm).unwrap();
            fd[(0, j)] = (zp.range - zm.range) / (2.0 * h);
            fd[(1, j)] = wrap_angle(zp.bearing - zm.bearing) / (2.0 * h);
        }
        let err = (fd - an).norm() / an.norm();
        assert!(err < 1e-6, "state {s:?}: relative error {err}");
        checked += 1;
    }
}

#[test]
fn process_noise_covariance_matches_configuration() {
    let model = NoiseModel::default();
    let mut sampler = NoiseSampler::with_seed(&model, 7);
    let n = 100_000;
    let samples: Vec<Vector3<f64>> = (0..n).map(|_| sampler.process()).collect();
    let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
    let cov = samples.iter().map(|w| (w - mean) * (w - mean).transpose()).sum::<Matrix3<f64>>() / (n - 1) as f64;
    let err = (cov - model.process_cov).norm() / model.process_cov.norm();
    assert!(err < 0.05, "relative Frobenius error {err}");
}

#[test]
fn measurement_noise_covariance_matches_configuration() {
    let model = NoiseModel::default();
    let mut sampler = NoiseSampler::with_seed(&model, 8);
    let n = 100_000;
    let mut cov = nalgebra::Matrix2::zeros();
    for _ in 0..n {
        let q = sampler.measurement();
        cov += q * q.transpose();
    }
    cov /= n as f64;
    let err = (cov - model.meas_cov).norm() / model.meas_cov.norm();
    assert!(err < 0.05, "relative Frobenius error {err}");
}
