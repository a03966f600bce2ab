//! Extended Kalman filter over the vehicle pose.
//!
//! The filter propagates the *commanded* input only; any injected actuator
//! data is invisible to it and shows up as a posterior-minus-prior state
//! correction, the residue consumed by the detector.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SymmetricEigen, Vector2, Vector3};

use crate::dynamics::{
    self, jacobian_f_state, jacobian_g_state, predicted_measurement, wrap_angle, AttackSignal, ControlInput, Landmark,
    Measurement, VehicleParams, VehicleState,
};
use crate::error::{Error, Result};

/// Innovation covariances with a condition number beyond this are treated as divergence.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Mean and covariance of the pose estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub mean: VehicleState,
    pub cov: Matrix3<f64>,
}

impl BeliefState {
    pub fn new(mean: VehicleState, cov: Matrix3<f64>) -> Self {
        Self { mean, cov }
    }

    /// Belief centred on a known start pose with isotropic covariance.
    pub fn around(mean: VehicleState, variance: f64) -> Self {
        Self::new(mean, Matrix3::identity() * variance)
    }

    pub fn is_valid(&self) -> bool {
        self.mean.is_finite()
            && self.cov.iter().all(|v| v.is_finite())
            && (self.cov - self.cov.transpose()).amax() <= 1e-9
            && SymmetricEigen::new(self.cov).eigenvalues.min() >= -1e-12
    }
}

/// Posterior-minus-prior state correction, heading component wrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residue(pub Vector3<f64>);

impl Residue {
    pub fn zero() -> Self {
        Residue(Vector3::zeros())
    }
}

pub fn residue(posterior_mean: &VehicleState, prior_mean: &VehicleState) -> Residue {
    Residue(posterior_mean.difference(prior_mean))
}

/// Time update with the commanded input.
pub fn predict(belief: &BeliefState, u_commanded: ControlInput, params: &VehicleParams, process_cov: &Matrix3<f64>) -> Result<BeliefState> {
    let mean = dynamics::step(&belief.mean, u_commanded, AttackSignal::ZERO, &Vector3::zeros(), params)?;
    let applied = params.limits.apply(u_commanded, AttackSignal::ZERO);
    let f = jacobian_f_state(&belief.mean, applied, params);
    let cov = f * belief.cov * f.transpose() + process_cov;
    Ok(BeliefState::new(mean, symmetrize(&cov)))
}

/// Everything the measurement update computes, for the detector and the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub posterior: BeliefState,
    /// `z - g(prior mean)`, bearing wrapped.
    pub innovation: Vector2<f64>,
    pub innovation_cov: Matrix2<f64>,
    pub gain: Matrix3x2<f64>,
    pub residue: Residue,
    /// Covariance induced on the residue, `K S K^T`.
    pub residue_cov: Matrix3<f64>,
}

/// Measurement update of a predicted belief.
pub fn update(prior: &BeliefState, z: &Measurement, landmark: &Landmark, meas_cov: &Matrix2<f64>) -> Result<UpdateOutcome> {
    let expected = predicted_measurement(&prior.mean, landmark)?;
    let h: Matrix2x3<f64> = jacobian_g_state(&prior.mean, landmark)?;
    let innovation = Vector2::new(z.range - expected.range, wrap_angle(z.bearing - expected.bearing));

    let p = prior.cov;
    let s = symmetrize2(&(h * p * h.transpose() + meas_cov));
    let ph_t = p * h.transpose();
    // P = 0 means the prior is certain; the gain is identically zero and S may be singular.
    let gain = if ph_t.iter().all(|v| *v == 0.0) {
        Matrix3x2::zeros()
    } else {
        let eig = SymmetricEigen::new(s).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_INNOVATION_CONDITION) {
            return Err(Error::FilterDivergence { condition });
        }
        let s_inv = s.try_inverse().ok_or(Error::FilterDivergence { condition })?;
        ph_t * s_inv
    };

    let correction = gain * innovation;
    let mean = VehicleState::from_vector(&(prior.mean.to_vector() + correction));
    let cov = symmetrize(&((Matrix3::identity() - gain * h) * p));
    let posterior = BeliefState::new(mean, cov);
    if !posterior.mean.is_finite() || !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::fault("EKF update produced a non-finite belief"));
    }
    Ok(UpdateOutcome {
        posterior,
        innovation,
        innovation_cov: s,
        gain,
        residue: residue(&posterior.mean, &prior.mean),
        residue_cov: symmetrize(&(gain * s * gain.transpose())),
    })
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}
