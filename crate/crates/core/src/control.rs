//! Reference trajectory and the nominal tracking controller.

use crate::dynamics::{wrap_angle, ActuatorLimits, ControlInput, VehicleState};
use crate::error::{Error, Result};

/// One sample of the reference trajectory with its feedforward terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// Feedforward speed, m/s.
    pub v: f64,
    /// Feedforward yaw rate, rad/s.
    pub omega: f64,
}

impl ReferencePoint {
    pub fn pose(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.theta)
    }
}

/// Counter-clockwise circle starting at angle zero from its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleTrajectory {
    pub center: (f64, f64),
    pub radius: f64,
    pub speed: f64,
}

impl Default for CircleTrajectory {
    fn default() -> Self {
        Self {
            center: (0.0, 0.0),
            radius: 5.0,
            speed: 1.0,
        }
    }
}

impl CircleTrajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config(format!("radius must be finite and positive, got {}", self.radius)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::config(format!("speed must be finite and positive, got {}", self.speed)));
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite()) {
            return Err(Error::config("trajectory center must be finite"));
        }
        Ok(())
    }

    pub fn at(&self, k: usize, dt: f64) -> ReferencePoint {
        circle_reference(k, dt, self.radius, self.speed, self.center)
    }
}

/// Point `k` steps along a circle traversed at constant `speed`.
pub fn circle_reference(k: usize, dt: f64, radius: f64, speed: f64, center: (f64, f64)) -> ReferencePoint {
    let angle = speed * k as f64 * dt / radius;
    let (s, c) = angle.sin_cos();
    ReferencePoint {
        x: center.0 + radius * c,
        y: center.1 + radius * s,
        theta: wrap_angle(angle + std::f64::consts::FRAC_PI_2),
        v: speed,
        omega: speed / radius,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    pub k_x: f64,
    pub k_y: f64,
    pub k_theta: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_x: 1.0,
            k_y: 4.0,
            k_theta: 2.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.k_x, self.k_y, self.k_theta]
            .iter()
            .all(|g| *g > 0.0 && g.is_finite());
        if !all_positive {
            return Err(Error::config(format!("controller gains must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Kinematic Lyapunov tracking law mapped to a steering angle through the
/// bicycle relation `omega = v / L * tan(phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingController {
    pub gains: ControllerGains,
    /// Speed floor used in the steering map to avoid the `v -> 0` singularity.
    pub v_floor: f64,
    pub wheelbase: f64,
    pub limits: ActuatorLimits,
}

impl TrackingController {
    pub const DEFAULT_V_FLOOR: f64 = 0.1;

    pub fn new(gains: ControllerGains, wheelbase: f64, limits: ActuatorLimits) -> Self {
        Self {
            gains,
            v_floor: Self::DEFAULT_V_FLOOR,
            wheelbase,
            limits,
        }
    }

    pub fn control(&self, belief_mean: &VehicleState, reference: &ReferencePoint) -> ControlInput {
        tracking_control(belief_mean, reference, &self.gains, self.wheelbase, self.v_floor, &self.limits)
    }
}

/// Tracking error of `pose` against `reference`, expressed in the vehicle frame.
pub fn frame_error(pose: &VehicleState, reference: &ReferencePoint) -> (f64, f64, f64) {
    let dx = reference.x - pose.x;
    let dy = reference.y - pose.y;
    let (s, c) = pose.theta.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy, wrap_angle(reference.theta - pose.theta))
}

pub fn tracking_control(
    belief_mean: &VehicleState,
    reference: &ReferencePoint,
    gains: &ControllerGains,
    wheelbase: f64,
    v_floor: f64,
    limits: &ActuatorLimits,
) -> ControlInput {
    let (e_x, e_y, e_theta) = frame_error(belief_mean, reference);
    let v = reference.v * e_theta.cos() + gains.k_x * e_x;
    let omega = reference.omega + reference.v * (gains.k_y * e_y + gains.k_theta * e_theta.sin());
    let phi = (wheelbase * omega / v.max(v_floor)).atan();
    limits.clamp(v, phi)
}
