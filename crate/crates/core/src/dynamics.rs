//! Discrete-time kinematic bicycle model with additive process noise, a
//! range-bearing landmark sensor, and the actuator injection channel.
//!
//! The plant integrates `x[k+1] = x[k] + dt * f(x[k], sat(u[k] + d[k])) + w[k]`
//! with forward Euler, where `sat` applies the physical actuator limits to the
//! attacked command. Noise is drawn by [`NoiseSampler`] and passed in
//! explicitly so that every function here stays pure.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use nalgebra::{Cholesky, Matrix2, Matrix2x3, Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Planar pose of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// `self - other` with the heading component wrapped.
    pub fn difference(&self, other: &VehicleState) -> Vector3<f64> {
        Vector3::new(
            self.x - other.x,
            self.y - other.y,
            wrap_angle(self.theta - other.theta),
        )
    }
}

/// Speed and steering command issued by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// m/s
    pub v: f64,
    /// rad
    pub phi: f64,
}

impl ControlInput {
    pub fn new(v: f64, phi: f64) -> Self {
        Self { v, phi }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v, self.phi)
    }
}

/// Additive false data on the actuator channel, same shape as [`ControlInput`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttackSignal {
    pub v_d: f64,
    pub phi_d: f64,
}

impl AttackSignal {
    pub const ZERO: AttackSignal = AttackSignal { v_d: 0.0, phi_d: 0.0 };

    pub fn new(v_d: f64, phi_d: f64) -> Self {
        Self { v_d, phi_d }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v_d, self.phi_d)
    }
}

/// Range-bearing reading of the landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub range: f64,
    pub bearing: f64,
}

impl Measurement {
    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.range, self.bearing)
    }
}

/// Landmark position observed by the range sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
}

impl Landmark {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Minimum vehicle-landmark distance for which the sensor model is defined.
pub const EPSILON_RANGE: f64 = 1e-6;

/// Physical actuator saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorLimits {
    pub v_max: f64,
    pub phi_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            phi_max: FRAC_PI_4,
        }
    }
}

impl ActuatorLimits {
    pub fn clamp(&self, v: f64, phi: f64) -> ControlInput {
        ControlInput {
            v: v.clamp(0.0, self.v_max),
            phi: phi.clamp(-self.phi_max, self.phi_max),
        }
    }

    /// Command the plant actually executes under injection `d`.
    pub fn apply(&self, u: ControlInput, d: AttackSignal) -> ControlInput {
        self.clamp(u.v + d.v_d, u.phi + d.phi_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Integration step, seconds.
    pub dt: f64,
    /// Wheelbase, meters.
    pub wheelbase: f64,
    pub limits: ActuatorLimits,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheelbase: 1.0,
            limits: ActuatorLimits::default(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(Error::config(format!(
                "wheelbase must be positive, got {}",
                self.wheelbase
            )));
        }
        if !(self.limits.v_max > 0.0 && self.limits.v_max.is_finite()) {
            return Err(Error::config("v_max must be positive"));
        }
        if !(self.limits.phi_max > 0.0 && self.limits.phi_max < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("phi_max must lie in (0, pi/2)"));
        }
        Ok(())
    }
}

/// Advances the true vehicle state one step.
///
/// `w` is the process-noise sample for this step (zero for a noiseless step).
pub fn step(
    state: &VehicleState,
    u: ControlInput,
    d: AttackSignal,
    w: &Vector3<f64>,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !state.is_finite() {
        return Err(Error::fault(format!("non-finite vehicle state {state:?}")));
    }
    if !(params.dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {}", params.dt)));
    }
    if !(params.wheelbase > 0.0) {
        return Err(Error::config("wheelbase must be positive"));
    }
    let applied = params.limits.apply(u, d);
    let dt = params.dt;
    let (s, c) = state.theta.sin_cos();
    let next = VehicleState::new(
        state.x + dt * applied.v * c + w[0],
        state.y + dt * applied.v * s + w[1],
        state.theta + dt * applied.v / params.wheelbase * applied.phi.tan() + w[2],
    );
    if !next.is_finite() {
        return Err(Error::fault("vehicle step produced a non-finite state"));
    }
    Ok(next)
}

/// Noise-free range and bearing from `state` to `landmark`.
pub fn predicted_measurement(state: &VehicleState, landmark: &Landmark) -> Result<Measurement> {
    let dx = landmark.x - state.x;
    let dy = landmark.y - state.y;
    let range = dx.hypot(dy);
    if !(range > EPSILON_RANGE) {
        return Err(Error::DegenerateGeometry { range });
    }
    Ok(Measurement {
        range,
        bearing: wrap_angle(dy.atan2(dx) - state.theta),
    })
}

/// Sensor reading with additive noise sample `q`.
pub fn measure(state: &VehicleState, landmark: &Landmark, q: &Vector2<f64>) -> Result<Measurement> {
    let m = predicted_measurement(state, landmark)?;
    Ok(Measurement {
        range: m.range + q[0],
        bearing: wrap_angle(m.bearing + q[1]),
    })
}

/// Jacobian of the Euler-discretized transition with respect to the state,
/// evaluated at the executed command `u_effective`.
pub fn jacobian_f_state(state: &VehicleState, u_effective: ControlInput, params: &VehicleParams) -> Matrix3<f64> {
    let (s, c) = state.theta.sin_cos();
    let dtv = params.dt * u_effective.v;
    Matrix3::new(
        1.0, 0.0, -dtv * s,
        0.0, 1.0, dtv * c,
        0.0, 0.0, 1.0,
    )
}

/// Jacobian of `(range, bearing)` with respect to `(x, y, theta)`.
pub fn jacobian_g_state(state: &VehicleState, landmark: &Landmark) -> Result<Matrix2x3<f64>> {
    let dx = landmark.x - state.x;
    let dy = landmark.y - state.y;
    let q = dx * dx + dy * dy;
    let r = q.sqrt();
    if !(r > EPSILON_RANGE) {
        return Err(Error::DegenerateGeometry { range: r });
    }
    Ok(Matrix2x3::new(
        -dx / r, -dy / r, 0.0,
        dy / q, -dx / q, -1.0,
    ))
}

fn is_symmetric<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>, tol: f64) -> bool {
    (0..N).all(|i| (0..N).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Gaussian process and measurement noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub process_cov: Matrix3<f64>,
    pub meas_cov: Matrix2<f64>,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            process_cov: Matrix3::from_diagonal(&Vector3::new(4e-4, 4e-4, 1e-4)),
            meas_cov: Matrix2::from_diagonal(&Vector2::new(1e-2, 1e-3)),
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            process_cov: Matrix3::zeros(),
            meas_cov: Matrix2::zeros(),
            seed,
        }
    }

    /// Zero process and measurement covariance.
    pub fn is_noiseless(&self) -> bool {
        self.process_cov.iter().all(|v| *v == 0.0) && self.meas_cov.iter().all(|v| *v == 0.0)
    }

    /// Checks symmetry and definiteness. A fully noiseless model is accepted
    /// as a degenerate simulation setting; otherwise the measurement
    /// covariance must be positive definite.
    pub fn validate(&self) -> Result<()> {
        if !self.process_cov.iter().chain(self.meas_cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::config("noise covariances must be finite"));
        }
        if !is_symmetric(&self.process_cov, 1e-12) {
            return Err(Error::config("process covariance is not symmetric"));
        }
        if !is_symmetric(&self.meas_cov, 1e-12) {
            return Err(Error::config("measurement covariance is not symmetric"));
        }
        let q_min = SymmetricEigen::new(self.process_cov).eigenvalues.min();
        if q_min < -1e-12 {
            return Err(Error::config(format!(
                "process covariance has negative eigenvalue {q_min:e}"
            )));
        }
        if self.is_noiseless() {
            return Ok(());
        }
        if Cholesky::new(self.meas_cov).is_none() {
            return Err(Error::config("measurement covariance must be positive definite"));
        }
        Ok(())
    }
}

/// Square-root factors `S` with `S * S^T = cov` for PSD covariances.
fn psd_factor3(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
}

fn psd_factor2(cov: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*cov);
    eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
}

/// Seeded Gaussian noise source owned by one simulation instance.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    rng: ChaCha8Rng,
    process_factor: Matrix3<f64>,
    meas_factor: Matrix2<f64>,
}

impl NoiseSampler {
    pub fn new(model: &NoiseModel) -> Self {
        Self::with_seed(model, model.seed)
    }

    pub fn with_seed(model: &NoiseModel, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            process_factor: psd_factor3(&model.process_cov),
            meas_factor: psd_factor2(&model.meas_cov),
        }
    }

    pub fn process(&mut self) -> Vector3<f64> {
        let z = Vector3::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
        self.process_factor * z
    }

    pub fn measurement(&mut self) -> Vector2<f64> {
        let z = Vector2::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
        self.meas_factor * z
    }
}
