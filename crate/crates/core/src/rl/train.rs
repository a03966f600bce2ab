//! Episode loop for both learners.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::Algorithm;
use super::gae::gae;
use super::mlp::Mlp;
use super::policy::GaussianPolicy;
use super::ppo::{ppo_update, PpoConfig, PpoStats, RolloutBatch};
use super::replay::{ReplayBuffer, Transition};
use super::sac::{SacAgent, SacConfig};
use crate::dynamics::AttackSignal;
use crate::environment::{AttackEnv, EnvConfig, OBS_DIM};
use crate::error::{Error, Result};
use crate::metrics::EpisodeTrace;

/// Episodes averaged when picking the policy to keep.
pub const TRAILING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { episodes: 50, hidden: vec![64, 64], ppo: PpoConfig::default(), sac: SacConfig::default() }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        self.ppo.validate()?;
        self.sac.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Policy with the best trailing mean episode reward, or the final policy
    /// when fewer than [`TRAILING_WINDOW`] episodes ran.
    pub policy: GaussianPolicy,
    /// Cumulative reward of each training episode.
    pub reward_curve: Vec<f64>,
    /// Last episode of the window that selected `policy`.
    pub best_episode: Option<usize>,
    /// Per-update diagnostics; empty for SAC.
    pub ppo_stats: Vec<PpoStats>,
}

/// Trailing means of `curve` over [`TRAILING_WINDOW`] episodes; entry `i`
/// covers episodes `i + 1 - TRAILING_WINDOW ..= i`.
pub fn trailing_means(curve: &[f64]) -> Vec<f64> {
    curve.windows(TRAILING_WINDOW).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}

fn to_signal(action: &[f64]) -> AttackSignal {
    AttackSignal::new(action[0], action[1])
}

/// Tracks the best trailing window and the policy that ended it.
struct BestKeeper {
    best: Option<(f64, usize, GaussianPolicy)>,
}

impl BestKeeper {
    fn observe(&mut self, curve: &[f64], policy: &GaussianPolicy) {
        if curve.len() < TRAILING_WINDOW {
            return;
        }
        let w = &curve[curve.len() - TRAILING_WINDOW..];
        let mean = w.iter().sum::<f64>() / TRAILING_WINDOW as f64;
        if self.best.as_ref().is_none_or(|(b, _, _)| mean > *b) {
            self.best = Some((mean, curve.len() - 1, policy.clone()));
        }
    }

    fn finish(self, last: GaussianPolicy, curve: Vec<f64>) -> TrainOutcome {
        match self.best {
            Some((_, ep, policy)) => {
                TrainOutcome { policy, reward_curve: curve, best_episode: Some(ep), ppo_stats: Vec::new() }
            }
            None => TrainOutcome { policy: last, reward_curve: curve, best_episode: None, ppo_stats: Vec::new() },
        }
    }
}

/// Trains an attack policy. Every random draw (initial weights, episode noise
/// seeds, exploration, minibatch order) flows from `seed`, so a fixed seed
/// reproduces the reward curve exactly.
pub fn train(env_config: &EnvConfig, algorithm: Algorithm, config: &TrainerConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let env = AttackEnv::new(env_config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match algorithm {
        Algorithm::Ppo => train_ppo(env, config, &mut rng),
        Algorithm::Sac => train_sac(env, config, &mut rng),
    }
}

fn train_ppo(mut env: AttackEnv, config: &TrainerConfig, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
    let pc = &config.ppo;
    let scale = env.config().attack_box.scale().to_vec();
    let mut policy = GaussianPolicy::random(OBS_DIM, &config.hidden, scale, rng)?;
    let mut vdims = vec![OBS_DIM];
    vdims.extend_from_slice(&config.hidden);
    vdims.push(1);
    let mut value = Mlp::random(&vdims, 1.0, rng)?;
    let mut policy_opt = Adam::new(policy.net().num_params(), pc.policy_lr);
    let mut value_opt = Adam::new(value.num_params(), pc.value_lr);
    let act = policy.action_dim();

    let mut curve = Vec::with_capacity(config.episodes);
    let mut keeper = BestKeeper { best: None };
    let mut history = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let behaviour = policy.clone();
        let mut obs = env.reset(rng.random())?;
        let (mut obs_cols, mut pre, mut logp, mut rewards, mut dones) = (vec![], vec![], vec![], vec![], vec![]);
        let mut total = 0.0;
        loop {
            let s = behaviour.sample(obs.as_slice(), rng)?;
            let out = env.step(to_signal(&s.action))?;
            obs_cols.extend_from_slice(obs.as_slice());
            pre.extend_from_slice(&s.pre_squash);
            logp.push(s.gaussian_log_prob);
            rewards.push(pc.reward_scale * out.reward);
            dones.push(out.done);
            total += out.reward;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        let n = rewards.len();
        let obs_m = DMatrix::from_column_slice(OBS_DIM, n, &obs_cols);
        let mut values: Vec<f64> = value.forward_batch(&obs_m)?.output().iter().copied().collect();
        values.push(value.forward(obs.as_slice())?[0]);
        let (advantages, returns) = gae(&rewards, &values, &dones, pc.gamma, pc.lambda);
        let batch = RolloutBatch {
            obs: obs_m,
            pre_squash: DMatrix::from_column_slice(act, n, &pre),
            old_log_prob: logp,
            advantages,
            returns,
        };
        curve.push(total);
        keeper.observe(&curve, &behaviour);
        let stats = ppo_update(&mut policy, &mut value, &mut policy_opt, &mut value_opt, &batch, pc, rng)?;
        log::info!(
            "ppo episode {episode}: reward {total:.3}, kl {:.4}, clip {:.3}, epochs {}",
            stats.approx_kl,
            stats.clip_fraction,
            stats.epochs_run
        );
        history.push(stats);
    }
    let mut out = keeper.finish(policy, curve);
    out.ppo_stats = history;
    Ok(out)
}

fn train_sac(mut env: AttackEnv, config: &TrainerConfig, rng: &mut ChaCha8Rng) -> Result<TrainOutcome> {
    let sc = &config.sac;
    let scale = env.config().attack_box.scale().to_vec();
    let mut agent = SacAgent::new(OBS_DIM, &config.hidden, scale.clone(), sc.clone(), rng)?;
    let mut buffer = ReplayBuffer::new(sc.replay_capacity);
    let mut steps = 0usize;
    let mut curve = Vec::with_capacity(config.episodes);
    let mut keeper = BestKeeper { best: None };
    for episode in 0..config.episodes {
        let behaviour = agent.policy.clone();
        let mut obs = env.reset(rng.random())?;
        let mut total = 0.0;
        loop {
            let normalized: Vec<f64> = if steps < sc.warmup_steps {
                (0..scale.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
            } else {
                let s = agent.policy.sample(obs.as_slice(), rng)?;
                s.action.iter().zip(&scale).map(|(a, s)| a / s).collect()
            };
            let action: Vec<f64> = normalized.iter().zip(&scale).map(|(a, s)| a * s).collect();
            let out = env.step(to_signal(&action))?;
            total += out.reward;
            buffer.push(Transition {
                obs: obs.as_slice().to_vec(),
                action: normalized,
                reward: out.reward,
                next_obs: out.observation.as_slice().to_vec(),
                done: out.done,
            });
            steps += 1;
            if steps >= sc.warmup_steps && buffer.len() >= sc.batch_size {
                let batch = buffer.sample(sc.batch_size, rng);
                agent.update(&batch, rng)?;
            }
            obs = out.observation;
            if out.done {
                break;
            }
        }
        curve.push(total);
        keeper.observe(&curve, &behaviour);
        log::info!("sac episode {episode}: reward {total:.3}, alpha {:.4}", agent.alpha());
    }
    Ok(keeper.finish(agent.policy, curve))
}

/// How an evaluation rollout picks actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// `scale * tanh(mean)`.
    Mean,
    Sample,
}

/// Runs one full episode of `policy` and returns its trace.
pub fn rollout(env: &mut AttackEnv, policy: &GaussianPolicy, seed: u64, mode: ActionMode) -> Result<EpisodeTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_fac7_10a5);
    let mut obs = env.reset(seed)?;
    while !env.is_done() {
        let action = match mode {
            ActionMode::Mean => policy.mean_action(obs.as_slice())?,
            ActionMode::Sample => policy.sample(obs.as_slice(), &mut rng)?.action,
        };
        obs = env.step(to_signal(&action))?.observation;
    }
    Ok(env.take_trace())
}
