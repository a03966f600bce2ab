//! Tanh-squashed diagonal Gaussian policy.
//!
//! The trunk emits `[mean; log_std]` per action dimension. A pre-squash
//! sample `u ~ N(mean, exp(log_std)^2)` maps to the action
//! `a = scale * tanh(u)`, so actions always lie strictly inside the box
//! `(-scale, scale)`.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{ForwardCache, Mlp};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `u` under a diagonal Gaussian.
pub fn gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((u, m), ls)| {
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// `ln |da/du|` for `a = scale * tanh(u)`.
pub fn squash_log_jacobian(u: &[f64], scale: &[f64]) -> f64 {
    u.iter().zip(scale).map(|(u, s)| s.ln() + log_one_minus_tanh_sq(*u)).sum()
}

/// Entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

/// Distribution heads for a batch, one column per sample.
#[derive(Debug, Clone)]
pub struct PolicyHeads {
    pub cache: ForwardCache,
    pub mean: DMatrix<f64>,
    /// Clamped log standard deviation.
    pub log_std: DMatrix<f64>,
    /// Whether the raw log-std lay inside the clamp range (gradient passes).
    pub log_std_free: DMatrix<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    /// Gaussian log-density of `pre_squash`.
    pub gaussian_log_prob: f64,
    /// Log-density of `action`, including the tanh and scale Jacobian.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: Mlp,
    scale: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(net: Mlp, scale: Vec<f64>) -> Result<Self> {
        if net.output_dim() != 2 * scale.len() || scale.is_empty() {
            return Err(Error::Usage(format!(
                "policy trunk emits {} values, expected {} for a {}-d action",
                net.output_dim(),
                2 * scale.len(),
                scale.len()
            )));
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("action scale must be positive"));
        }
        Ok(Self { net, scale })
    }

    /// Random trunk with a small output layer so the initial policy is
    /// centred with unit pre-squash spread.
    pub fn random<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], scale: Vec<f64>, rng: &mut R) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * scale.len());
        let net = Mlp::random(&dims, 0.01, rng)?;
        Self::new(net, scale)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn action_dim(&self) -> usize {
        self.scale.len()
    }

    pub fn heads(&self, obs: &DMatrix<f64>) -> Result<PolicyHeads> {
        let cache = self.net.forward_batch(obs)?;
        let out = cache.output();
        let n = self.action_dim();
        let mean = out.rows(0, n).into_owned();
        let raw = out.rows(n, n);
        let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_free = raw.map(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        Ok(PolicyHeads { cache, mean, log_std, log_std_free })
    }

    /// `scale * tanh(u)`, kept strictly inside the box where `tanh` rounds to +-1.
    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        const EDGE: f64 = 1.0 - f64::EPSILON;
        u.iter().zip(&self.scale).map(|(u, s)| s * u.tanh().clamp(-EDGE, EDGE)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<PolicySample> {
        let heads = self.heads(&DMatrix::from_column_slice(obs.len(), 1, obs))?;
        let mean = heads.mean.as_slice();
        let log_std = heads.log_std.as_slice();
        let pre_squash: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(self.evaluate(&pre_squash, mean, log_std))
    }

    /// Deterministic action `scale * tanh(mean)`.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let heads = self.heads(&DMatrix::from_column_slice(obs.len(), 1, obs))?;
        Ok(self.squash(heads.mean.as_slice()))
    }

    fn evaluate(&self, pre_squash: &[f64], mean: &[f64], log_std: &[f64]) -> PolicySample {
        let g = gaussian_log_prob(pre_squash, mean, log_std);
        PolicySample {
            action: self.squash(pre_squash),
            gaussian_log_prob: g,
            log_prob: g - squash_log_jacobian(pre_squash, &self.scale),
            pre_squash: pre_squash.to_vec(),
        }
    }

    /// Log-density of an in-box action.
    pub fn log_prob_of_action(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let heads = self.heads(&DMatrix::from_column_slice(obs.len(), 1, obs))?;
        let u: Vec<f64> = action.iter().zip(&self.scale).map(|(a, s)| (a / s).atanh()).collect();
        Ok(self.evaluate(&u, heads.mean.as_slice(), heads.log_std.as_slice()).log_prob)
    }
}
