//! TOML run configuration.
//!
//! Every section is optional and falls back to the library defaults, but any
//! key that is present is validated and unknown keys are rejected. Matrices
//! are given either as a list of diagonal entries or as a list of rows.

use std::fs;
use std::path::Path;

use avlab_core::control::{CircleTrajectory, ControllerGains};
use avlab_core::detection::DetectorConfig;
use avlab_core::dynamics::{ActuatorLimits, Landmark, NoiseModel, VehicleParams};
use avlab_core::environment::{AttackBox, AttackSchedule, EnergyTerm, EnvConfig, RewardWeights, ScenarioPreset};
use avlab_core::rl::{PpoConfig, SacConfig, TrainerConfig};
use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn diagonal(d: &[f64]) -> Self {
        MatrixSpec::Diagonal(d.to_vec())
    }

    fn to_rows(&self, n: usize, name: &str) -> Result<Vec<Vec<f64>>, CliError> {
        let rows = match self {
            MatrixSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(CliError::config(format!("{name}: expected {n} diagonal entries, got {}", d.len())));
                }
                (0..n).map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect()
            }
            MatrixSpec::Rows(r) => r.clone(),
        };
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(CliError::config(format!("{name}: expected a {n}x{n} matrix")));
        }
        Ok(rows)
    }

    fn matrix3(&self, name: &str) -> Result<Matrix3<f64>, CliError> {
        let r = self.to_rows(3, name)?;
        Ok(Matrix3::from_fn(|i, j| r[i][j]))
    }

    fn matrix2(&self, name: &str) -> Result<Matrix2<f64>, CliError> {
        let r = self.to_rows(2, name)?;
        Ok(Matrix2::from_fn(|i, j| r[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub dt: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub phi_max: f64,
    pub landmark: [f64; 2],
}

impl Default for VehicleSection {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self { dt: p.dt, wheelbase: p.wheelbase, v_max: p.limits.v_max, phi_max: p.limits.phi_max, landmark: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub process_cov: MatrixSpec,
    pub meas_cov: MatrixSpec,
    /// Base seed of the evaluation and baseline episodes.
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            process_cov: MatrixSpec::diagonal(n.process_cov.diagonal().as_slice()),
            meas_cov: MatrixSpec::diagonal(n.meas_cov.diagonal().as_slice()),
            seed: n.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Initial EKF covariance is this times the identity.
    pub initial_variance: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { initial_variance: EnvConfig::default().initial_variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub center: [f64; 2],
    pub radius: f64,
    pub speed: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = CircleTrajectory::default();
        Self { center: [t.center.0, t.center.1], radius: t.radius, speed: t.speed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub k_x: f64,
    pub k_y: f64,
    pub k_theta: f64,
    pub v_floor: f64,
    pub trajectory: TrajectorySection,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let g = ControllerGains::default();
        let e = EnvConfig::default();
        Self { k_x: g.k_x, k_y: g.k_y, k_theta: g.k_theta, v_floor: e.v_floor, trajectory: TrajectorySection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub false_alarm_rate: f64,
    pub window: usize,
    pub dof: u32,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self { false_alarm_rate: d.false_alarm_rate, window: d.window, dof: d.dof }
    }
}

/// Either a named preset or explicit `period` and `active_len`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub preset: Option<String>,
    pub period: Option<usize>,
    pub active_len: Option<usize>,
    pub offset: Option<usize>,
}

impl ScheduleSection {
    fn build(&self) -> Result<AttackSchedule, CliError> {
        let mut schedule = match (&self.preset, self.period, self.active_len) {
            (Some(p), None, None) => p.parse::<ScenarioPreset>().map_err(CliError::from)?.schedule(),
            (None, Some(period), Some(active_len)) => AttackSchedule { period, active_len, offset: 0 },
            (None, None, None) => AttackSchedule::default(),
            (Some(_), _, _) => return Err(CliError::config("schedule: give either preset or period/active_len, not both")),
            _ => return Err(CliError::config("schedule: period and active_len must be given together")),
        };
        if let Some(offset) = self.offset {
            schedule.offset = offset;
        }
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub q_track: MatrixSpec,
    pub r_energy: MatrixSpec,
    pub alpha: f64,
    /// `"d"` charges energy on the injection, `"u"` on the controller command.
    pub energy_on: String,
}

impl Default for RewardSection {
    fn default() -> Self {
        let r = RewardWeights::default();
        Self {
            q_track: MatrixSpec::diagonal(r.q_track.diagonal().as_slice()),
            r_energy: MatrixSpec::diagonal(r.r_energy.diagonal().as_slice()),
            alpha: r.alpha,
            energy_on: "d".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub v_d_max: f64,
    pub phi_d_max: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let b = AttackBox::default();
        Self { v_d_max: b.v_d_max, phi_d_max: b.phi_d_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Non-positive disables the early stop.
    pub target_kl: f64,
    pub reward_scale: f64,
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        Self {
            gamma: p.gamma,
            lambda: p.lambda,
            clip_eps: p.clip_eps,
            policy_lr: p.policy_lr,
            value_lr: p.value_lr,
            epochs: p.epochs,
            minibatch: p.minibatch,
            entropy_coef: p.entropy_coef,
            max_grad_norm: p.max_grad_norm,
            target_kl: p.target_kl.unwrap_or(0.0),
            reward_scale: p.reward_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub initial_alpha: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    pub max_grad_norm: f64,
    pub reward_scale: f64,
}

impl Default for SacSection {
    fn default() -> Self {
        let s = SacConfig::default();
        Self {
            gamma: s.gamma,
            tau: s.tau,
            lr: s.lr,
            initial_alpha: s.initial_alpha,
            batch_size: s.batch_size,
            replay_capacity: s.replay_capacity,
            warmup_steps: s.warmup_steps,
            max_grad_norm: s.max_grad_norm,
            reward_scale: s.reward_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub episodes: usize,
    pub horizon: usize,
    /// Training seeds; `train` uses the first unless `--seed` is given.
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self { episodes: t.episodes, horizon: EnvConfig::default().horizon, seeds: vec![0, 1, 2], hidden: t.hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: VehicleSection,
    pub noise: NoiseSection,
    pub estimator: EstimatorSection,
    pub controller: ControllerSection,
    pub detector: DetectorSection,
    pub schedule: ScheduleSection,
    pub reward: RewardSection,
    pub attack: AttackSection,
    pub ppo: PpoSection,
    pub sac: SacSection,
    pub training: TrainingSection,
}

/// A parsed and validated configuration together with the hash of the bytes
/// it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub hash: String,
}

/// First 16 hex digits of the SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {}", e.message())))
    }

    pub fn env_config(&self) -> Result<EnvConfig, CliError> {
        let v = &self.vehicle;
        let c = &self.controller;
        let energy_on = match self.reward.energy_on.as_str() {
            "d" => EnergyTerm::Attack,
            "u" => EnergyTerm::Command,
            other => return Err(CliError::config(format!("reward.energy_on must be \"d\" or \"u\", got {other:?}"))),
        };
        let env = EnvConfig {
            vehicle: VehicleParams {
                dt: v.dt,
                wheelbase: v.wheelbase,
                limits: ActuatorLimits { v_max: v.v_max, phi_max: v.phi_max },
            },
            noise: NoiseModel {
                process_cov: self.noise.process_cov.matrix3("noise.process_cov")?,
                meas_cov: self.noise.meas_cov.matrix2("noise.meas_cov")?,
                seed: self.noise.seed,
            },
            landmark: Landmark::new(v.landmark[0], v.landmark[1]),
            trajectory: CircleTrajectory {
                center: (c.trajectory.center[0], c.trajectory.center[1]),
                radius: c.trajectory.radius,
                speed: c.trajectory.speed,
            },
            gains: ControllerGains { k_x: c.k_x, k_y: c.k_y, k_theta: c.k_theta },
            v_floor: c.v_floor,
            detector: DetectorConfig {
                false_alarm_rate: self.detector.false_alarm_rate,
                window: self.detector.window,
                dof: self.detector.dof,
            },
            schedule: self.schedule.build()?,
            reward: RewardWeights {
                q_track: self.reward.q_track.matrix3("reward.q_track")?,
                r_energy: self.reward.r_energy.matrix2("reward.r_energy")?,
                alpha: self.reward.alpha,
                energy_on,
            },
            attack_box: AttackBox { v_d_max: self.attack.v_d_max, phi_d_max: self.attack.phi_d_max },
            horizon: self.training.horizon,
            initial_variance: self.estimator.initial_variance,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig, CliError> {
        let p = &self.ppo;
        let s = &self.sac;
        let t = TrainerConfig {
            episodes: self.training.episodes,
            hidden: self.training.hidden.clone(),
            ppo: PpoConfig {
                gamma: p.gamma,
                lambda: p.lambda,
                clip_eps: p.clip_eps,
                policy_lr: p.policy_lr,
                value_lr: p.value_lr,
                epochs: p.epochs,
                minibatch: p.minibatch,
                entropy_coef: p.entropy_coef,
                max_grad_norm: p.max_grad_norm,
                target_kl: (p.target_kl > 0.0).then_some(p.target_kl),
                reward_scale: p.reward_scale,
            },
            sac: SacConfig {
                gamma: s.gamma,
                tau: s.tau,
                lr: s.lr,
                initial_alpha: s.initial_alpha,
                batch_size: s.batch_size,
                replay_capacity: s.replay_capacity,
                warmup_steps: s.warmup_steps,
                max_grad_norm: s.max_grad_norm,
                reward_scale: s.reward_scale,
            },
        };
        t.validate()?;
        if self.training.seeds.is_empty() {
            return Err(CliError::config("training.seeds must list at least one seed"));
        }
        Ok(t)
    }
}

impl LoadedConfig {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let text = std::str::from_utf8(bytes).map_err(|_| CliError::config("config is not valid UTF-8"))?;
        let run = RunConfig::parse(text)?;
        Ok(Self { env: run.env_config()?, trainer: run.trainer_config()?, hash: config_hash(bytes), run })
    }

    /// Unreadable or invalid files are configuration errors naming the path.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(&path.display().to_string()))
    }
}
