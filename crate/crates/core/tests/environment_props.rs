use avlab_core::dynamics::{AttackSignal, NoiseModel};
use avlab_core::environment::*;
use avlab_core::Error;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_action(rng: &mut ChaCha8Rng) -> AttackSignal {
    AttackSignal::new(rng.random_range(-2.0..2.0), rng.random_range(-0.3..0.3))
}

#[test]
fn reset_is_seeded_and_starts_on_reference() {
    let mut env = AttackEnv::new(EnvConfig::default()).unwrap();
    let a = env.reset(17).unwrap();
    let b = env.reset(17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.as_slice().len(), 10);
    assert_eq!(OBS_DIM, 10);
    let truth = env.truth().unwrap();
    assert_eq!(env.tracking_cost(&truth, 0), 0.0);
}

#[test]
fn episodes_replay_exactly_for_fixed_seed_and_actions() {
    let run = || {
        let mut env = AttackEnv::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        env.reset(99).unwrap();
        let mut outs = Vec::new();
        while !env.is_done() {
            outs.push(env.step(random_action(&mut rng)).unwrap());
        }
        outs
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 500);
    assert_eq!(a, b);
}

#[test]
fn schedule_gates_the_injection() {
    let cfg = EnvConfig { schedule: ScenarioPreset::Short.schedule(), ..EnvConfig::default() };
    let mut env = AttackEnv::new(cfg).unwrap();
    env.reset(1).unwrap();
    while !env.is_done() {
        let k = env.step_index();
        let out = env.step(AttackSignal::new(0.8, 0.05)).unwrap();
        let active = (k % 50) < 10;
        assert_eq!(out.attack_active, active, "step {k}");
        if !active {
            assert_eq!((out.record.v_d, out.record.phi_d), (0.0, 0.0));
            assert_eq!(out.components.energy, 0.0);
            assert_eq!(out.components.stealth, 0.0);
        } else {
            assert_eq!((out.record.v_d, out.record.phi_d), (0.8, 0.05));
        }
    }
}

#[test]
fn injection_is_clipped_to_the_attack_box() {
    let mut env = AttackEnv::new(EnvConfig::default()).unwrap();
    env.reset(1).unwrap();
    let out = env.step(AttackSignal::new(50.0, -3.0)).unwrap();
    let b = AttackBox::default();
    assert_eq!((out.record.v_d, out.record.phi_d), (b.v_d_max, -b.phi_d_max));
}

#[test]
fn reward_arithmetic() {
    assert_eq!(RewardComponents { tracking: 2.0, energy: 2.0, stealth: 10.0 }.reward(), 10.0);
}

/// 10^4 random steps: the reward is exactly the sum of its parts, the
/// stealth bonus is 0 or alpha and only paid while undetected on an attacked
/// step, and inactive steps carry no energy.
#[test]
fn reward_decomposes_over_random_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = EnvConfig { schedule: ScenarioPreset::Short.schedule(), ..EnvConfig::default() };
    let alpha = cfg.reward.alpha;
    let mut env = AttackEnv::new(cfg).unwrap();
    let mut steps = 0;
    while steps < 10_000 {
        env.reset(rng.random()).unwrap();
        while !env.is_done() && steps < 10_000 {
            let out = env.step(random_action(&mut rng)).unwrap();
            let c = out.components;
            assert_eq!(out.reward, c.tracking - c.energy + c.stealth);
            assert!(c.tracking >= 0.0 && c.energy >= 0.0);
            assert!(c.stealth == 0.0 || c.stealth == alpha);
            if !out.attack_active {
                assert_eq!(c.energy, 0.0);
                assert_eq!(c.stealth, 0.0);
            } else {
                assert_eq!(c.stealth == 0.0, out.verdict.flagged);
            }
            steps += 1;
        }
    }
}

#[test]
fn stepping_outside_an_episode_is_a_usage_error() {
    let cfg = EnvConfig { horizon: 3, ..EnvConfig::default() };
    let mut env = AttackEnv::new(cfg).unwrap();
    assert!(matches!(env.step(AttackSignal::ZERO), Err(Error::Usage(_))));
    env.reset(0).unwrap();
    for _ in 0..3 {
        env.step(AttackSignal::ZERO).unwrap();
    }
    assert!(env.is_done());
    assert!(matches!(env.step(AttackSignal::ZERO), Err(Error::Usage(_))));
}

#[test]
fn noiseless_unattacked_episode_tracks_reference() {
    let mut cfg = EnvConfig { noise: NoiseModel::noiseless(0), initial_variance: 0.0, ..EnvConfig::default() };
    cfg.reward.q_track = Matrix3::identity();
    let mut env = AttackEnv::new(cfg).unwrap();
    env.reset(0).unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    while !env.is_done() {
        let k = env.step_index();
        let out = env.step(AttackSignal::ZERO).unwrap();
        assert!(!out.verdict.flagged);
        if k >= 50 {
            sum += out.components.tracking;
            n += 1;
        }
    }
    assert!(sum / (n as f64) < 1e-2, "mean J_t {}", sum / n as f64);
}

#[test]
fn objective_examples() {
    use avlab_core::metrics::{EpisodeTrace, StepRecord};
    let rec = |k, j_t, j_e, j_s| StepRecord { k, attack_active: true, j_t, j_e, j_s, ..StepRecord::default() };
    let mut t = EpisodeTrace::new();
    t.push(rec(0, 2.0, 2.0, 10.0));
    assert_eq!(objective(&t).unwrap(), 10.0);
    t.push(rec(1, 4.0, 2.0, 0.0));
    assert_eq!(objective(&t).unwrap(), 6.0);
    let mut z = EpisodeTrace::new();
    z.push(rec(0, 0.0, 0.0, 0.0));
    assert_eq!(objective(&z).unwrap(), 0.0);
    assert!(matches!(objective(&EpisodeTrace::new()), Err(Error::UndefinedMetric(_))));
}

#[test]
fn observation_phase_follows_schedule() {
    let mut env = AttackEnv::new(EnvConfig::default()).unwrap();
    let obs = env.reset(0).unwrap();
    assert_eq!(obs.0[9], 0.0);
    let mut last = obs;
    for _ in 0..30 {
        last = env.step(AttackSignal::ZERO).unwrap().observation;
    }
    assert!((last.0[9] - 0.3).abs() < 1e-12);
    assert!(last.0.iter().all(|v| v.is_finite()));
}
