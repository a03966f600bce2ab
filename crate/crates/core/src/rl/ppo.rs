//! Proximal policy optimization with a clipped surrogate.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::{clip_grad_norm, Adam};
use super::gae::normalize;
use super::mlp::Mlp;
use super::policy::{GaussianPolicy, PolicyHeads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Stop the remaining epochs once the approximate KL exceeds this.
    pub target_kl: Option<f64>,
    /// Rewards are multiplied by this before computing advantages.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            epochs: 10,
            minibatch: 64,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            target_kl: Some(0.05),
            reward_scale: 0.05,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::config("ppo gamma and lambda must lie in [0, 1]"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config(format!("ppo clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::config("ppo learning rates must be positive"));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::config("ppo epochs and minibatch must be positive"));
        }
        if !(self.max_grad_norm > 0.0 && self.reward_scale > 0.0 && self.entropy_coef >= 0.0) {
            return Err(Error::config("ppo max_grad_norm and reward_scale must be positive"));
        }
        if matches!(self.target_kl, Some(kl) if !(kl > 0.0)) {
            return Err(Error::config("ppo target_kl must be positive"));
        }
        Ok(())
    }
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// On-policy rollout data, one column per transition.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub obs: DMatrix<f64>,
    pub pre_squash: DMatrix<f64>,
    /// Gaussian log-density of `pre_squash` under the behaviour policy.
    pub old_log_prob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.old_log_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_prob.is_empty()
    }

    fn select(&self, idx: &[usize]) -> RolloutBatch {
        RolloutBatch {
            obs: self.obs.select_columns(idx),
            pre_squash: self.pre_squash.select_columns(idx),
            old_log_prob: idx.iter().map(|&i| self.old_log_prob[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PolicyLossStats {
    pub loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Negated clipped surrogate (minus the entropy bonus) on a batch, with its
/// gradient with respect to the policy parameters.
pub fn policy_loss(
    policy: &GaussianPolicy,
    batch: &RolloutBatch,
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<(PolicyLossStats, Vec<f64>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let nf = n as f64;
    let heads = policy.heads(&batch.obs)?;
    let PolicyHeads { cache, mean, log_std, log_std_free } = &heads;
    let act = policy.action_dim();
    let mut upstream = DMatrix::zeros(2 * act, n);
    let mut stats = PolicyLossStats::default();
    for j in 0..n {
        let mut lp = 0.0;
        for i in 0..act {
            let z = (batch.pre_squash[(i, j)] - mean[(i, j)]) / log_std[(i, j)].exp();
            lp += -0.5 * z * z - log_std[(i, j)] - 0.918_938_533_204_672_8;
        }
        let log_ratio = lp - batch.old_log_prob[j];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[j];
        stats.loss -= clipped_surrogate(ratio, adv, clip_eps) / nf;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if (ratio - 1.0).abs() > clip_eps {
            stats.clip_fraction += 1.0 / nf;
        }
        let unclipped = ratio * adv <= ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        let d_lp = if unclipped { -ratio * adv / nf } else { 0.0 };
        for i in 0..act {
            let sigma = log_std[(i, j)].exp();
            let diff = batch.pre_squash[(i, j)] - mean[(i, j)];
            upstream[(i, j)] = d_lp * diff / (sigma * sigma);
            if log_std_free[(i, j)] {
                let z = diff / sigma;
                upstream[(act + i, j)] = d_lp * (z * z - 1.0) - entropy_coef / nf;
            }
        }
    }
    let entropy: f64 = log_std.iter().sum::<f64>() / nf;
    stats.loss -= entropy_coef * entropy;
    let (grad, _) = policy.net().backward(cache, &upstream)?;
    Ok((stats, grad))
}

/// `0.5 * mean ||V(s) - target||^2` with its parameter gradient.
pub fn value_loss(net: &Mlp, obs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let cache = net.forward_batch(obs)?;
    let out = cache.output();
    if out.shape() != targets.shape() {
        return Err(Error::Usage(format!("targets shape {:?} does not match {:?}", targets.shape(), out.shape())));
    }
    let n = obs.ncols() as f64;
    let diff = out - targets;
    let loss = 0.5 * diff.norm_squared() / n;
    let (grad, _) = net.backward(&cache, &(diff / n))?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub epochs_run: usize,
}

/// Runs the configured epochs of minibatch updates. Advantages are
/// normalized over the whole batch first. A non-finite loss or gradient
/// restores both networks and optimizers to their state on entry and is
/// reported as a training error.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    batch: &RolloutBatch,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Ok(PpoStats::default());
    }
    let saved = (policy.clone(), value.clone(), policy_opt.clone(), value_opt.clone());
    let mut batch = batch.clone();
    normalize(&mut batch.advantages);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let result = (|| {
        for _ in 0..config.epochs {
            idx.shuffle(rng);
            let (mut pl, mut vl, mut cf, mut kl, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for chunk in idx.chunks(config.minibatch) {
                let mb = batch.select(chunk);
                let (ps, mut pg) = policy_loss(policy, &mb, config.clip_eps, config.entropy_coef)?;
                let targets = DMatrix::from_row_slice(1, mb.len(), &mb.returns);
                let (vloss, mut vg) = value_loss(value, &mb.obs, &targets)?;
                let finite = ps.loss.is_finite()
                    && vloss.is_finite()
                    && pg.iter().chain(&vg).all(|g| g.is_finite());
                if !finite {
                    return Err(Error::Training(format!(
                        "non-finite ppo loss (policy {}, value {vloss})",
                        ps.loss
                    )));
                }
                clip_grad_norm(&mut pg, config.max_grad_norm);
                clip_grad_norm(&mut vg, config.max_grad_norm);
                policy_opt.step(policy.net_mut().params_mut(), &pg);
                value_opt.step(value.params_mut(), &vg);
                pl += ps.loss;
                vl += vloss;
                cf += ps.clip_fraction;
                kl += ps.approx_kl;
                count += 1.0;
            }
            stats = PpoStats {
                policy_loss: pl / count,
                value_loss: vl / count,
                clip_fraction: cf / count,
                approx_kl: kl / count,
                epochs_run: stats.epochs_run + 1,
            };
            if matches!(config.target_kl, Some(t) if stats.approx_kl > t) {
                break;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        *policy = saved.0;
        *value = saved.1;
        *policy_opt = saved.2;
        *value_opt = saved.3;
        return Err(e);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::policy::gaussian_log_prob;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert!((clipped_surrogate(1.1, 3.0, 0.2) - 3.3).abs() < 1e-12);
        assert!((clipped_surrogate(1.5, -1.0, 0.2) + 1.5).abs() < 1e-12);
    }

    fn toy_batch(policy: &GaussianPolicy, rng: &mut ChaCha8Rng, n: usize) -> RolloutBatch {
        let obs = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let heads = policy.heads(&obs).unwrap();
        let mut pre = DMatrix::zeros(1, n);
        let mut old = Vec::new();
        for j in 0..n {
            // sampled near but not exactly from the policy, so ratios spread
            pre[(0, j)] = heads.mean[(0, j)] + rng.random_range(-1.5..1.5);
            let shifted = heads.mean[(0, j)] + rng.random_range(-0.4..0.4);
            old.push(gaussian_log_prob(&[pre[(0, j)]], &[shifted], &[heads.log_std[(0, j)]]));
        }
        RolloutBatch {
            obs,
            pre_squash: pre,
            old_log_prob: old,
            advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            returns: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut policy = GaussianPolicy::random(3, &[8], vec![1.0], &mut rng).unwrap();
        // widen the output layer so the heads move with the parameters
        for p in policy.net_mut().params_mut().iter_mut() {
            *p *= 3.0;
        }
        let batch = toy_batch(&policy, &mut rng, 12);
        let (_, grad) = policy_loss(&policy, &batch, 0.2, 0.01).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..policy.net().num_params() {
            let mut plus = policy.clone();
            plus.net_mut().params_mut()[i] += h;
            let mut minus = policy.clone();
            minus.net_mut().params_mut()[i] -= h;
            let lp = policy_loss(&plus, &batch, 0.2, 0.01).unwrap().0.loss;
            let lm = policy_loss(&minus, &batch, 0.2, 0.01).unwrap().0.loss;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / (1.0 + fd.abs()));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn identical_policy_gives_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let policy = GaussianPolicy::random(3, &[8], vec![1.0], &mut rng).unwrap();
        let mut batch = toy_batch(&policy, &mut rng, 20);
        let heads = policy.heads(&batch.obs).unwrap();
        for j in 0..batch.len() {
            batch.old_log_prob[j] =
                gaussian_log_prob(&[batch.pre_squash[(0, j)]], &[heads.mean[(0, j)]], &[heads.log_std[(0, j)]]);
        }
        let (stats, _) = policy_loss(&policy, &batch, 0.2, 0.0).unwrap();
        let mean_adv = batch.advantages.iter().sum::<f64>() / batch.len() as f64;
        assert!((stats.loss + mean_adv).abs() < 1e-12);
        assert!(stats.approx_kl.abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let net = Mlp::random(&[3, 8, 2], 1.0, &mut rng).unwrap();
        let obs = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let targets = DMatrix::from_fn(2, 7, |_, _| rng.random_range(-1.0..1.0));
        let (_, grad) = value_loss(&net, &obs, &targets).unwrap();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (value_loss(&plus, &obs, &targets).unwrap().0 - value_loss(&minus, &obs, &targets).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn update_is_seeded_and_moves_parameters() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut policy = GaussianPolicy::random(3, &[8], vec![1.0], &mut rng).unwrap();
            let mut value = Mlp::random(&[3, 8, 1], 1.0, &mut rng).unwrap();
            let batch = toy_batch(&policy, &mut rng, 100);
            let mut po = Adam::new(policy.net().num_params(), 3e-4);
            let mut vo = Adam::new(value.num_params(), 1e-3);
            let before = policy.clone();
            ppo_update(&mut policy, &mut value, &mut po, &mut vo, &batch, &PpoConfig::default(), &mut rng).unwrap();
            assert_ne!(before, policy);
            (policy, value)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_batch_rolls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut policy = GaussianPolicy::random(3, &[8], vec![1.0], &mut rng).unwrap();
        let mut value = Mlp::random(&[3, 8, 1], 1.0, &mut rng).unwrap();
        let mut batch = toy_batch(&policy, &mut rng, 10);
        batch.returns[3] = f64::NAN;
        let (p0, v0) = (policy.clone(), value.clone());
        let mut po = Adam::new(policy.net().num_params(), 3e-4);
        let mut vo = Adam::new(value.num_params(), 1e-3);
        let err = ppo_update(&mut policy, &mut value, &mut po, &mut vo, &batch, &PpoConfig::default(), &mut rng);
        assert!(matches!(err, Err(Error::Training(_))));
        assert_eq!(policy, p0);
        assert_eq!(value, v0);
    }
}
