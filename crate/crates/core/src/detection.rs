//! Chi-square detector over the whitened EKF residue.
//!
//! Each step the residue is whitened by its own online covariance `K S K^T`,
//! so the threshold test is time-varying even though the quantile is fixed.

use std::collections::VecDeque;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::estimation::Residue;

/// Ridge added to the residue covariance before inversion.
pub const COVARIANCE_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorVerdict {
    pub score: f64,
    pub threshold: f64,
    /// The binary detector output `D_k`.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub false_alarm_rate: f64,
    /// Number of trailing scores averaged per decision.
    pub window: usize,
    /// Degrees of freedom of the per-step statistic.
    pub dof: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            false_alarm_rate: 0.05,
            window: 1,
            dof: 2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.false_alarm_rate > 0.0 && self.false_alarm_rate < 1.0) {
            return Err(Error::config(format!(
                "false_alarm_rate must lie in (0, 1), got {}",
                self.false_alarm_rate
            )));
        }
        if self.window == 0 {
            return Err(Error::config("detector window must be at least 1"));
        }
        if self.dof == 0 || self.dof > 3 {
            return Err(Error::config(format!("detector dof must be 1..=3, got {}", self.dof)));
        }
        Ok(())
    }

    /// Threshold on the windowed mean score. The mean of `w` independent
    /// chi2(dof) scores is chi2(w * dof) / w.
    pub fn threshold(&self) -> Result<f64> {
        let w = self.window as u32;
        Ok(chi2_quantile(1.0 - self.false_alarm_rate, self.dof * w)? / w as f64)
    }
}

/// Quadratic form `r^T (S_r + ridge I)^-1 r`.
pub fn chi2_score(r: &Residue, residue_cov: &Matrix3<f64>) -> Result<f64> {
    if !r.0.iter().chain(residue_cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::fault("non-finite residue or residue covariance"));
    }
    let regularized = residue_cov + Matrix3::identity() * COVARIANCE_RIDGE;
    let chol = regularized
        .cholesky()
        .ok_or_else(|| Error::fault("residue covariance is not positive definite after regularization"))?;
    let score = r.0.dot(&chol.solve(&r.0));
    if !score.is_finite() {
        return Err(Error::fault("non-finite chi-square score"));
    }
    Ok(score.max(0.0))
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..1000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (log_prefix.exp() * h)).clamp(0.0, 1.0)
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Inverse chi-square CDF by bisection.
pub fn chi2_quantile(p: f64, dof: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!("quantile probability must lie in (0, 1), got {p}")));
    }
    if dof == 0 {
        return Err(Error::config("chi-square dof must be at least 1"));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Decision on the trailing window of scores (oldest first).
pub fn verdict(scores: &[f64], config: &DetectorConfig) -> Result<DetectorVerdict> {
    if scores.is_empty() {
        return Err(Error::Usage("detector verdict needs at least one score".into()));
    }
    let window = &scores[scores.len().saturating_sub(config.window)..];
    let score = window.iter().sum::<f64>() / window.len() as f64;
    let threshold = config.threshold()?;
    Ok(DetectorVerdict {
        score,
        threshold,
        flagged: score > threshold,
    })
}

/// Stateful detector owning the score window of one simulation instance.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    threshold: f64,
    scores: VecDeque<f64>,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            threshold: config.threshold()?,
            scores: VecDeque::with_capacity(config.window),
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.scores.clear();
    }

    pub fn observe(&mut self, r: &Residue, residue_cov: &Matrix3<f64>) -> Result<DetectorVerdict> {
        let s = chi2_score(r, residue_cov)?;
        if self.scores.len() == self.config.window {
            self.scores.pop_front();
        }
        self.scores.push_back(s);
        let score = self.scores.iter().sum::<f64>() / self.scores.len() as f64;
        Ok(DetectorVerdict {
            score,
            threshold: self.threshold,
            flagged: score > self.threshold,
        })
    }
}
