//! Soft actor-critic with twin critics, Polyak-averaged targets and a learned
//! temperature.
//!
//! Critics see the observation stacked on the normalized action `tanh(u)`.
//! The log-density used for the entropy terms is that of the normalized
//! action, so the target entropy `-action_dim` does not depend on the box.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::{clip_grad_norm, Adam};
use super::mlp::Mlp;
use super::policy::{log_one_minus_tanh_sq, GaussianPolicy};
use super::ppo::value_loss;
use super::replay::Transition;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub initial_alpha: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Uniform random steps before the first update.
    pub warmup_steps: usize,
    pub max_grad_norm: f64,
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            initial_alpha: 0.2,
            batch_size: 256,
            replay_capacity: 100_000,
            warmup_steps: 1000,
            max_grad_norm: 0.5,
            reward_scale: 0.05,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("sac gamma must lie in [0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("sac tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.initial_alpha > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) {
            return Err(Error::config("sac lr, initial_alpha, max_grad_norm and reward_scale must be positive"));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(Error::config("sac batch_size and replay_capacity must be positive"));
        }
        Ok(())
    }
}

/// Soft Bellman target `r + gamma * (1 - done) * (q_next - alpha * log_pi_next)`.
pub fn soft_target(reward: f64, done: bool, q_next: f64, log_pi_next: f64, alpha: f64, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (q_next - alpha * log_pi_next)
    }
}

/// Reparameterized actions for a batch: `u = mean + std * eps`.
struct Reparam {
    heads: super::policy::PolicyHeads,
    eps: DMatrix<f64>,
    u: DMatrix<f64>,
    /// Normalized actions `tanh(u)`.
    a: DMatrix<f64>,
    log_prob: Vec<f64>,
}

fn reparam(policy: &GaussianPolicy, obs: &DMatrix<f64>, eps: DMatrix<f64>) -> Result<Reparam> {
    let heads = policy.heads(obs)?;
    let u = &heads.mean + heads.log_std.map(f64::exp).component_mul(&eps);
    let a = u.map(f64::tanh);
    let log_prob = (0..obs.ncols())
        .map(|j| {
            (0..u.nrows())
                .map(|i| {
                    -0.5 * eps[(i, j)].powi(2) - heads.log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh_sq(u[(i, j)])
                })
                .sum()
        })
        .collect();
    Ok(Reparam { heads, eps, u, a, log_prob })
}

fn stack(obs: &DMatrix<f64>, actions: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(obs.nrows() + actions.nrows(), obs.ncols());
    x.rows_mut(0, obs.nrows()).copy_from(obs);
    x.rows_mut(obs.nrows(), actions.nrows()).copy_from(actions);
    x
}

/// `mean(alpha * log_pi - min(Q1, Q2))` under the reparameterized actions
/// `mean + std * eps`, with its gradient with respect to the policy.
/// Also returns the mean log-density.
pub fn actor_loss(
    policy: &GaussianPolicy,
    q1: &Mlp,
    q2: &Mlp,
    alpha: f64,
    obs: &DMatrix<f64>,
    eps: &DMatrix<f64>,
) -> Result<(f64, f64, Vec<f64>)> {
    let n = obs.ncols();
    let nf = n as f64;
    let act = policy.action_dim();
    let r = reparam(policy, obs, eps.clone())?;
    let x = stack(obs, &r.a);
    let c1 = q1.forward_batch(&x)?;
    let c2 = q2.forward_batch(&x)?;
    let v1 = c1.output().clone();
    let v2 = c2.output().clone();
    // dQmin/dQi per sample; the smaller critic carries the gradient
    let pick1 = DMatrix::from_fn(1, n, |_, j| if v1[(0, j)] <= v2[(0, j)] { 1.0 } else { 0.0 });
    let pick2 = pick1.map(|p| 1.0 - p);
    let (_, g1) = q1.backward(&c1, &pick1)?;
    let (_, g2) = q2.backward(&c2, &pick2)?;
    let dq_da = (g1 + g2).rows(obs.nrows(), act).into_owned();

    let mut loss = 0.0;
    let mut mean_lp = 0.0;
    let mut upstream = DMatrix::zeros(2 * act, n);
    for j in 0..n {
        let qmin = v1[(0, j)].min(v2[(0, j)]);
        loss += (alpha * r.log_prob[j] - qmin) / nf;
        mean_lp += r.log_prob[j] / nf;
        for i in 0..act {
            let t = r.u[(i, j)].tanh();
            let sigma_eps = r.heads.log_std[(i, j)].exp() * r.eps[(i, j)];
            let dq_du = dq_da[(i, j)] * (1.0 - t * t);
            upstream[(i, j)] = (alpha * 2.0 * t - dq_du) / nf;
            if r.heads.log_std_free[(i, j)] {
                upstream[(act + i, j)] = (alpha * (-1.0 + 2.0 * t * sigma_eps) - dq_du * sigma_eps) / nf;
            }
        }
    }
    let (grad, _) = policy.net().backward(&r.heads.cache, &upstream)?;
    Ok((loss, mean_lp, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub q1: Mlp,
    pub q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    log_alpha: f64,
    target_entropy: f64,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    config: SacConfig,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        scale: Vec<f64>,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let act = scale.len();
        let policy = GaussianPolicy::random(obs_dim, hidden, scale, rng)?;
        let mut qdims = vec![obs_dim + act];
        qdims.extend_from_slice(hidden);
        qdims.push(1);
        let q1 = Mlp::random(&qdims, 1.0, rng)?;
        let q2 = Mlp::random(&qdims, 1.0, rng)?;
        Ok(Self {
            policy_opt: Adam::new(policy.net().num_params(), config.lr),
            q1_opt: Adam::new(q1.num_params(), config.lr),
            q2_opt: Adam::new(q2.num_params(), config.lr),
            alpha_opt: Adam::new(1, config.lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: config.initial_alpha.ln(),
            target_entropy: -(act as f64),
            policy,
            q1,
            q2,
            config,
        })
    }

    pub fn target_critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1_target, &self.q2_target)
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// followed by the Polyak update of the target critics.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<SacStats> {
        if batch.is_empty() {
            return Ok(SacStats { alpha: self.alpha(), ..SacStats::default() });
        }
        let n = batch.len();
        let obs_dim = batch[0].obs.len();
        let act = self.policy.action_dim();
        let obs = DMatrix::from_fn(obs_dim, n, |i, j| batch[j].obs[i]);
        let next_obs = DMatrix::from_fn(obs_dim, n, |i, j| batch[j].next_obs[i]);
        let actions = DMatrix::from_fn(act, n, |i, j| batch[j].action[i]);
        let alpha = self.alpha();

        let next_eps = DMatrix::from_fn(act, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let next = reparam(&self.policy, &next_obs, next_eps)?;
        let xn = stack(&next_obs, &next.a);
        let t1 = self.q1_target.forward_batch(&xn)?;
        let t2 = self.q2_target.forward_batch(&xn)?;
        let targets = DMatrix::from_fn(1, n, |_, j| {
            soft_target(
                self.config.reward_scale * batch[j].reward,
                batch[j].done,
                t1.output()[(0, j)].min(t2.output()[(0, j)]),
                next.log_prob[j],
                alpha,
                self.config.gamma,
            )
        });

        let x = stack(&obs, &actions);
        let (l1, mut g1) = value_loss(&self.q1, &x, &targets)?;
        let (l2, mut g2) = value_loss(&self.q2, &x, &targets)?;

        let eps = DMatrix::from_fn(act, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (al, mean_lp, mut ga) = actor_loss(&self.policy, &self.q1, &self.q2, alpha, &obs, &eps)?;
        let g_alpha = -(mean_lp + self.target_entropy);

        let finite = [l1, l2, al, g_alpha].iter().all(|v| v.is_finite())
            && g1.iter().chain(&g2).chain(&ga).all(|g| g.is_finite());
        if !finite {
            return Err(Error::Training(format!("non-finite sac loss (critics {l1}, {l2}, actor {al})")));
        }
        let clip = self.config.max_grad_norm;
        clip_grad_norm(&mut g1, clip);
        clip_grad_norm(&mut g2, clip);
        clip_grad_norm(&mut ga, clip);
        self.q1_opt.step(self.q1.params_mut(), &g1);
        self.q2_opt.step(self.q2.params_mut(), &g2);
        self.policy_opt.step(self.policy.net_mut().params_mut(), &ga);
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[g_alpha]);
        self.log_alpha = la[0];

        let tau = self.config.tau;
        for (t, s) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)] {
            for (tp, sp) in t.params_mut().iter_mut().zip(s.params()) {
                *tp = (1.0 - tau) * *tp + tau * sp;
            }
        }
        Ok(SacStats { critic_loss: 0.5 * (l1 + l2), actor_loss: al, alpha: self.alpha(), entropy: -mean_lp })
    }
}
