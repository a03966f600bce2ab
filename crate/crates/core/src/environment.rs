//! The attacker's decision process: plant, controller, EKF and detector wired
//! behind a `reset`/`step` interface.
//!
//! Per step, in order: the controller computes `u` from the belief, the
//! schedule gates the injection `d`, the plant executes `sat(u + d)`, the
//! sensor reads the landmark, the EKF predicts with `u` and updates, the
//! detector scores the residue, and the reward `J_t - J_e + J_s` is assembled
//! (`J_e` and `J_s` only on schedule-active steps).

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};

use crate::control::{frame_error, CircleTrajectory, ControllerGains, ReferencePoint, TrackingController};
use crate::detection::{Detector, DetectorConfig, DetectorVerdict, COVARIANCE_RIDGE};
use crate::dynamics::{self, AttackSignal, Landmark, NoiseModel, NoiseSampler, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::estimation::{self, BeliefState, Residue};
use crate::metrics::{EpisodeTrace, StepRecord};

pub const OBS_DIM: usize = 10;
pub const ACTION_DIM: usize = 2;

/// Whitened residue components are clipped to this magnitude in the observation.
const OBS_RESIDUE_CLIP: f64 = 10.0;

/// Periodic attack windows: steps `offset + n * period .. + active_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackSchedule {
    pub period: usize,
    pub active_len: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioPreset {
    /// 50 active steps in every 100.
    Long,
    /// 10 active steps in every 50.
    Short,
}

impl ScenarioPreset {
    pub fn schedule(self) -> AttackSchedule {
        match self {
            ScenarioPreset::Long => AttackSchedule { period: 100, active_len: 50, offset: 0 },
            ScenarioPreset::Short => AttackSchedule { period: 50, active_len: 10, offset: 0 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioPreset::Long => "long",
            ScenarioPreset::Short => "short",
        }
    }
}

impl std::str::FromStr for ScenarioPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(ScenarioPreset::Long),
            "short" => Ok(ScenarioPreset::Short),
            other => Err(Error::config(format!("unknown scenario {other:?}, expected long or short"))),
        }
    }
}

impl Default for AttackSchedule {
    fn default() -> Self {
        ScenarioPreset::Long.schedule()
    }
}

impl AttackSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.active_len == 0 || self.active_len > self.period {
            return Err(Error::config(format!(
                "schedule needs 0 < active_len <= period, got active_len {} period {}",
                self.active_len, self.period
            )));
        }
        Ok(())
    }

    fn steps_into_period(&self, k: usize) -> usize {
        (k as i64 - self.offset as i64).rem_euclid(self.period as i64) as usize
    }

    pub fn is_active(&self, k: usize) -> bool {
        k >= self.offset && self.steps_into_period(k) < self.active_len
    }

    /// Position of step `k` within its period, in `[0, 1)`.
    pub fn phase(&self, k: usize) -> f64 {
        self.steps_into_period(k) as f64 / self.period as f64
    }
}

/// Which signal the energy term is charged on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyTerm {
    /// `d^T R d`, the injected data.
    #[default]
    Attack,
    /// `u^T R u`, the controller command.
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub q_track: Matrix3<f64>,
    pub r_energy: Matrix2<f64>,
    /// Stealth bonus per undetected attacked step.
    pub alpha: f64,
    pub energy_on: EnergyTerm,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            q_track: Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.1)),
            r_energy: Matrix2::identity() * 0.01,
            alpha: 10.0,
            energy_on: EnergyTerm::Attack,
        }
    }
}

fn check_psd(name: &str, m: DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::config(format!("{name} must be finite")));
    }
    if (&m - m.transpose()).amax() > 1e-12 {
        return Err(Error::config(format!("{name} must be symmetric")));
    }
    if m.symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::config(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        check_psd("Q_track", DMatrix::from_column_slice(3, 3, self.q_track.as_slice()))?;
        check_psd("R_energy", DMatrix::from_column_slice(2, 2, self.r_energy.as_slice()))?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Symmetric bound on each injection component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBox {
    pub v_d_max: f64,
    pub phi_d_max: f64,
}

impl Default for AttackBox {
    fn default() -> Self {
        Self { v_d_max: 1.0, phi_d_max: 0.1 }
    }
}

impl AttackBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_d_max > 0.0 && self.v_d_max.is_finite() && self.phi_d_max > 0.0 && self.phi_d_max.is_finite()) {
            return Err(Error::config(format!("attack box bounds must be positive, got {self:?}")));
        }
        Ok(())
    }

    pub fn clamp(&self, d: AttackSignal) -> AttackSignal {
        AttackSignal::new(d.v_d.clamp(-self.v_d_max, self.v_d_max), d.phi_d.clamp(-self.phi_d_max, self.phi_d_max))
    }

    /// Half-widths in action order.
    pub fn scale(&self) -> [f64; ACTION_DIM] {
        [self.v_d_max, self.phi_d_max]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub vehicle: VehicleParams,
    pub noise: NoiseModel,
    pub landmark: Landmark,
    pub trajectory: CircleTrajectory,
    pub gains: ControllerGains,
    pub v_floor: f64,
    pub detector: DetectorConfig,
    pub schedule: AttackSchedule,
    pub reward: RewardWeights,
    pub attack_box: AttackBox,
    /// Steps per episode.
    pub horizon: usize,
    /// Initial EKF covariance is `initial_variance * I`.
    pub initial_variance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            noise: NoiseModel::default(),
            landmark: Landmark::new(0.0, 0.0),
            trajectory: CircleTrajectory::default(),
            gains: ControllerGains::default(),
            v_floor: TrackingController::DEFAULT_V_FLOOR,
            detector: DetectorConfig::default(),
            schedule: AttackSchedule::default(),
            reward: RewardWeights::default(),
            attack_box: AttackBox::default(),
            horizon: 500,
            initial_variance: 0.01,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.noise.validate()?;
        self.trajectory.validate()?;
        self.gains.validate()?;
        self.detector.validate()?;
        self.schedule.validate()?;
        self.reward.validate()?;
        self.attack_box.validate()?;
        if !(self.v_floor > 0.0 && self.v_floor.is_finite()) {
            return Err(Error::config("v_floor must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.initial_variance >= 0.0 && self.initial_variance.is_finite()) {
            return Err(Error::config("initial_variance must be non-negative"));
        }
        if !(self.landmark.x.is_finite() && self.landmark.y.is_finite()) {
            return Err(Error::config("landmark must be finite"));
        }
        let (cx, cy) = self.trajectory.center;
        let start_range = (cx + self.trajectory.radius - self.landmark.x).hypot(cy - self.landmark.y);
        if start_range <= dynamics::EPSILON_RANGE {
            return Err(Error::config("landmark coincides with the trajectory start"));
        }
        Ok(())
    }
}

/// Attacker observation; see [`AttackEnv`] for the layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `J_t`, `J_e`, `J_s` of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardComponents {
    pub tracking: f64,
    pub energy: f64,
    pub stealth: f64,
}

impl RewardComponents {
    pub fn reward(&self) -> f64 {
        self.tracking - self.energy + self.stealth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub components: RewardComponents,
    pub done: bool,
    pub verdict: DetectorVerdict,
    pub truth: VehicleState,
    pub attack_active: bool,
    pub record: StepRecord,
}

#[derive(Debug, Clone)]
struct EpisodeState {
    k: usize,
    truth: VehicleState,
    belief: BeliefState,
    sampler: NoiseSampler,
    detector: Detector,
    whitened_residue: Vector3<f64>,
    last_flag: bool,
    trace: EpisodeTrace,
}

/// Single-threaded attack environment.
///
/// Observation layout (10 components):
/// `[e_x, e_y, e_theta, v_r / v_max, omega_r, w_1, w_2, w_3, D, phase]` where
/// `e_*` is the belief's tracking error in the vehicle frame against the
/// reference the next action acts on, `w` is the last residue divided
/// componentwise by its standard deviation (clipped to +-10), `D` the last
/// detector flag, and `phase` the schedule position of the next step.
#[derive(Debug, Clone)]
pub struct AttackEnv {
    config: EnvConfig,
    controller: TrackingController,
    episode: Option<EpisodeState>,
}

impl AttackEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut controller = TrackingController::new(config.gains, config.vehicle.wheelbase, config.vehicle.limits);
        controller.v_floor = config.v_floor;
        Ok(Self { config, controller, episode: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reference(&self, k: usize) -> ReferencePoint {
        self.config.trajectory.at(k, self.config.vehicle.dt)
    }

    /// Starts an episode with the vehicle on the reference start and the
    /// noise generator reseeded.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let start = self.reference(0).pose();
        let episode = EpisodeState {
            k: 0,
            truth: start,
            belief: BeliefState::around(start, self.config.initial_variance),
            sampler: NoiseSampler::with_seed(&self.config.noise, seed),
            detector: Detector::new(self.config.detector)?,
            whitened_residue: Vector3::zeros(),
            last_flag: false,
            trace: EpisodeTrace::new(),
        };
        self.episode = Some(episode);
        Ok(self.observe())
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.k >= self.config.horizon)
    }

    /// Step index of the next call to [`AttackEnv::step`].
    pub fn step_index(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.k)
    }

    pub fn truth(&self) -> Option<VehicleState> {
        self.episode.as_ref().map(|e| e.truth)
    }

    pub fn belief(&self) -> Option<BeliefState> {
        self.episode.as_ref().map(|e| e.belief)
    }

    pub fn trace(&self) -> Option<&EpisodeTrace> {
        self.episode.as_ref().map(|e| &e.trace)
    }

    pub fn take_trace(&mut self) -> EpisodeTrace {
        self.episode.as_mut().map(|e| std::mem::take(&mut e.trace)).unwrap_or_default()
    }

    fn observe(&self) -> Observation {
        let ep = self.episode.as_ref().expect("observe requires an active episode");
        let reference = self.reference(ep.k);
        let (e_x, e_y, e_theta) = frame_error(&ep.belief.mean, &reference);
        let w = ep.whitened_residue;
        Observation([
            e_x,
            e_y,
            e_theta,
            reference.v / self.config.vehicle.limits.v_max,
            reference.omega,
            w[0],
            w[1],
            w[2],
            f64::from(u8::from(ep.last_flag)),
            self.config.schedule.phase(ep.k),
        ])
    }

    /// Tracking cost of `pose` against the reference at step `k`.
    pub fn tracking_cost(&self, pose: &VehicleState, k: usize) -> f64 {
        let e = pose.difference(&self.reference(k).pose());
        (e.transpose() * self.config.reward.q_track * e)[0].max(0.0)
    }

    pub fn step(&mut self, action: AttackSignal) -> Result<StepOutcome> {
        if self.episode.is_none() {
            return Err(Error::Usage("step called before reset".into()));
        }
        if self.is_done() {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if !(action.v_d.is_finite() && action.phi_d.is_finite()) {
            return Err(Error::fault(format!("non-finite attack action {action:?}")));
        }
        let cfg = &self.config;
        let ep = self.episode.as_mut().expect("checked above");
        let k = ep.k;
        let dt = cfg.vehicle.dt;

        let reference = cfg.trajectory.at(k, dt);
        let u = self.controller.control(&ep.belief.mean, &reference);

        let active = cfg.schedule.is_active(k);
        let d = if active { cfg.attack_box.clamp(action) } else { AttackSignal::ZERO };

        let w = ep.sampler.process();
        let truth = dynamics::step(&ep.truth, u, d, &w, &cfg.vehicle)?;

        let q = ep.sampler.measurement();
        let z = dynamics::measure(&truth, &cfg.landmark, &q)?;
        let prior = estimation::predict(&ep.belief, u, &cfg.vehicle, &cfg.noise.process_cov)?;
        let upd = estimation::update(&prior, &z, &cfg.landmark, &cfg.noise.meas_cov)?;

        let verdict = ep.detector.observe(&upd.residue, &upd.residue_cov)?;

        let next_ref = cfg.trajectory.at(k + 1, dt);
        let e = truth.difference(&next_ref.pose());
        let tracking = (e.transpose() * cfg.reward.q_track * e)[0].max(0.0);
        let energy = if active {
            let s = match cfg.reward.energy_on {
                EnergyTerm::Attack => d.to_vector(),
                EnergyTerm::Command => u.to_vector(),
            };
            (s.transpose() * cfg.reward.r_energy * s)[0].max(0.0)
        } else {
            0.0
        };
        let stealth = if active && !verdict.flagged { cfg.reward.alpha } else { 0.0 };
        let components = RewardComponents { tracking, energy, stealth };
        let reward = components.reward();

        let Residue(r) = upd.residue;
        let record = StepRecord {
            k,
            x: truth.x,
            y: truth.y,
            theta: truth.theta,
            x_ref: next_ref.x,
            y_ref: next_ref.y,
            theta_ref: next_ref.theta,
            bx: upd.posterior.mean.x,
            by: upd.posterior.mean.y,
            btheta: upd.posterior.mean.theta,
            v_cmd: u.v,
            phi_cmd: u.phi,
            v_d: d.v_d,
            phi_d: d.phi_d,
            attack_active: active,
            range: z.range,
            bearing: z.bearing,
            r1: r[0],
            r2: r[1],
            r3: r[2],
            chi2: verdict.score,
            threshold: verdict.threshold,
            detected: verdict.flagged,
            j_t: tracking,
            j_e: energy,
            j_s: stealth,
            reward,
        };

        ep.truth = truth;
        ep.belief = upd.posterior;
        ep.whitened_residue = whiten(&r, &upd.residue_cov);
        ep.last_flag = verdict.flagged;
        ep.trace.push(record);
        ep.k += 1;

        let observation = self.observe();
        Ok(StepOutcome {
            observation,
            reward,
            components,
            done: self.is_done(),
            verdict,
            truth,
            attack_active: active,
            record,
        })
    }
}

fn whiten(r: &Vector3<f64>, cov: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        (r[i] / (cov[(i, i)] + COVARIANCE_RIDGE).sqrt()).clamp(-OBS_RESIDUE_CLIP, OBS_RESIDUE_CLIP)
    })
}

/// Mean per-step reward over the attacked steps of a trace.
pub fn objective(trace: &EpisodeTrace) -> Result<f64> {
    let (n, sum) = trace
        .attacked()
        .fold((0usize, 0.0), |(n, s), r| (n + 1, s + (r.j_t - r.j_e + r.j_s)));
    if n == 0 {
        return Err(Error::UndefinedMetric("objective: trace has no attacked steps".into()));
    }
    Ok(sum / n as f64)
}

/// One `d = 0` episode. No injection happens, so every record is marked
/// unattacked regardless of the schedule.
pub fn baseline_episode(config: &EnvConfig, seed: u64) -> Result<EpisodeTrace> {
    let mut env = AttackEnv::new(config.clone())?;
    env.reset(seed)?;
    while !env.is_done() {
        env.step(AttackSignal::ZERO)?;
    }
    let mut trace = env.take_trace();
    for r in &mut trace.records {
        r.attack_active = false;
    }
    Ok(trace)
}
