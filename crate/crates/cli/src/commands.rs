use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use avlab_core::environment::{baseline_episode, AttackEnv, EnvConfig, ScenarioPreset, ACTION_DIM, OBS_DIM};
use avlab_core::metrics::{self, EpisodeTrace, EvalReport};
use avlab_core::rl::{rollout, train, ActionMode, Algorithm, Checkpoint, GaussianPolicy};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::LoadedConfig;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "avlab", version, about = "Train and evaluate stealthy actuator attacks on an EKF-tracked vehicle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an attack policy and write a checkpoint plus its reward curve.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "ppo")]
        algo: String,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the first entry of `training.seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Reward curve CSV; defaults to the checkpoint path with a `.curve.csv` extension.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over fresh episodes.
    Eval {
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Overrides the configured schedule with a preset.
        #[arg(long)]
        scenario: Option<String>,
        /// Writes the first episode's trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Sample actions instead of using the policy mean.
        #[arg(long)]
        stochastic: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run unattacked episodes and report the detector flag rate.
    Baseline {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a trace CSV as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs a parsed command and returns what it prints on success.
pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Train { config, algo, out, seed, curve } => cmd_train(&config, &algo, &out, seed, curve.as_deref()),
        Command::Eval { config, policy, episodes, scenario, trace, report, stochastic, jobs } => {
            let mode = if stochastic { ActionMode::Sample } else { ActionMode::Mean };
            let opts = EvalOptions { episodes, scenario: scenario.as_deref(), mode, jobs };
            cmd_eval(&config, &policy, &opts, trace.as_deref(), report.as_deref())
        }
        Command::Baseline { config, episodes, report } => cmd_baseline(&config, episodes, report.as_deref()),
        Command::Plot { trace, out } => cmd_plot(&trace, &out),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn default_curve_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("curve.csv")
}

pub fn render_curve(curve: &[f64]) -> String {
    let mut s = String::from("episode,reward\n");
    for (i, r) in curve.iter().enumerate() {
        writeln!(s, "{i},{r:.16e}").expect("writing to a String");
    }
    s
}

pub fn cmd_train(
    config: &Path,
    algo: &str,
    out: &Path,
    seed: Option<u64>,
    curve: Option<&Path>,
) -> Result<String, CliError> {
    let cfg = LoadedConfig::load(config)?;
    let algorithm: Algorithm = algo.parse()?;
    let seed = seed.unwrap_or(cfg.run.training.seeds[0]);
    log::info!("training {algorithm} for {} episodes, seed {seed}, config {}", cfg.trainer.episodes, cfg.hash);
    let outcome = train(&cfg.env, algorithm, &cfg.trainer, seed)?;
    let checkpoint = Checkpoint { algorithm, seed, config_hash: cfg.hash.clone(), net: outcome.policy.net().clone() };
    checkpoint.save(out)?;
    let curve_path = curve.map_or_else(|| default_curve_path(out), Path::to_path_buf);
    write_file(&curve_path, render_curve(&outcome.reward_curve).as_bytes())?;
    let mut msg = format!(
        "algorithm = {algorithm}\nseed = {seed}\nepisodes = {}\ncheckpoint = {}\ncurve = {}\nconfig_hash = {}\n",
        outcome.reward_curve.len(),
        out.display(),
        curve_path.display(),
        cfg.hash
    );
    if let Some(ep) = outcome.best_episode {
        writeln!(msg, "best_episode = {ep}").expect("writing to a String");
    }
    Ok(msg)
}

/// Rebuilds the policy stored in a checkpoint, refusing one trained under a
/// different configuration.
pub fn load_policy(path: &Path, cfg: &LoadedConfig) -> Result<(Checkpoint, GaussianPolicy), CliError> {
    let checkpoint = Checkpoint::load(path)?;
    if checkpoint.config_hash != cfg.hash {
        return Err(CliError::config(format!(
            "{} was trained with config {}, but this config hashes to {}",
            path.display(),
            checkpoint.config_hash,
            cfg.hash
        )));
    }
    let net = &checkpoint.net;
    if net.input_dim() != OBS_DIM || net.output_dim() != 2 * ACTION_DIM {
        return Err(CliError::config(format!(
            "{}: policy maps {} -> {}, expected {OBS_DIM} -> {}",
            path.display(),
            net.input_dim(),
            net.output_dim(),
            2 * ACTION_DIM
        )));
    }
    let policy = GaussianPolicy::new(net.clone(), cfg.env.attack_box.scale().to_vec())?;
    Ok((checkpoint, policy))
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub episodes: usize,
    pub scenario: Option<&'a str>,
    pub mode: ActionMode,
    pub jobs: usize,
}

/// Seeds of the evaluation episodes: consecutive from the configured noise seed.
pub fn episode_seeds(base: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Runs one episode per seed, in parallel over `jobs` threads; traces come
/// back in seed order whatever the thread count.
pub fn evaluate(
    env: &EnvConfig,
    policy: &GaussianPolicy,
    seeds: &[u64],
    mode: ActionMode,
    jobs: usize,
) -> Result<Vec<EpisodeTrace>, CliError> {
    let run_one = |seed: &u64| -> Result<EpisodeTrace, CliError> {
        let mut e = AttackEnv::new(env.clone())?;
        Ok(rollout(&mut e, policy, *seed, mode)?)
    };
    if jobs <= 1 {
        return seeds.iter().map(run_one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| seeds.par_iter().map(run_one).collect())
}

pub fn with_scenario(env: &EnvConfig, scenario: Option<&str>) -> Result<EnvConfig, CliError> {
    let mut env = env.clone();
    if let Some(name) = scenario {
        env.schedule = name.parse::<ScenarioPreset>()?.schedule();
    }
    Ok(env)
}

pub fn render_report(report: &EvalReport, scenario: &str, algorithm: Algorithm, hash: &str) -> String {
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    format!(
        "scenario = {scenario}\nalgorithm = {algorithm}\nepisodes = {}\nseeds = {}\nrecall = {:.6}\nenergy = {:.6e}\ntracking_error = {:.6e}\nconfig_hash = {hash}\n",
        report.episodes,
        seeds.join(","),
        report.recall,
        report.energy,
        report.tracking_error
    )
}

pub fn cmd_eval(
    config: &Path,
    policy_path: &Path,
    opts: &EvalOptions<'_>,
    trace_out: Option<&Path>,
    report_out: Option<&Path>,
) -> Result<String, CliError> {
    if opts.episodes == 0 {
        return Err(CliError::config("--episodes must be at least 1, nothing to evaluate"));
    }
    if opts.jobs == 0 {
        return Err(CliError::config("--jobs must be at least 1"));
    }
    let cfg = LoadedConfig::load(config)?;
    let (checkpoint, policy) = load_policy(policy_path, &cfg)?;
    let env = with_scenario(&cfg.env, opts.scenario)?;
    let seeds = episode_seeds(cfg.env.noise.seed, opts.episodes);
    let traces = evaluate(&env, &policy, &seeds, opts.mode, opts.jobs)?;
    if let Some(path) = trace_out {
        metrics::export_trace(&traces[0], path)?;
    }
    let report = EvalReport::from_traces(&traces, seeds)?;
    let scenario = opts.scenario.unwrap_or("configured");
    let text = render_report(&report, scenario, checkpoint.algorithm, &cfg.hash);
    if let Some(path) = report_out {
        write_file(path, text.as_bytes())?;
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub flag_rate: f64,
    pub tracking_cost: f64,
    pub steps: usize,
}

pub fn baseline(env: &EnvConfig, seeds: &[u64]) -> Result<(BaselineSummary, Vec<EpisodeTrace>), CliError> {
    let traces = seeds.iter().map(|&s| baseline_episode(env, s)).collect::<Result<Vec<_>, _>>()?;
    let summary = BaselineSummary {
        flag_rate: metrics::flag_rate(&traces)?,
        tracking_cost: metrics::mean_tracking_cost_all(&traces)?,
        steps: traces.iter().map(EpisodeTrace::len).sum(),
    };
    Ok((summary, traces))
}

pub fn cmd_baseline(config: &Path, episodes: usize, report_out: Option<&Path>) -> Result<String, CliError> {
    if episodes == 0 {
        return Err(CliError::config("--episodes must be at least 1"));
    }
    let cfg = LoadedConfig::load(config)?;
    let seeds = episode_seeds(cfg.env.noise.seed, episodes);
    let (s, _) = baseline(&cfg.env, &seeds)?;
    let text = format!(
        "episodes = {episodes}\nsteps = {}\nflag_rate = {:.6}\nconfigured_false_alarm_rate = {}\ntracking_cost = {:.6e}\nconfig_hash = {}\n",
        s.steps, s.flag_rate, cfg.env.detector.false_alarm_rate, s.tracking_cost, cfg.hash
    );
    if let Some(path) = report_out {
        write_file(path, text.as_bytes())?;
    }
    Ok(text)
}

pub fn cmd_plot(trace: &Path, out: &Path) -> Result<String, CliError> {
    let t = metrics::import_trace(trace)?;
    metrics::export_plot(&t, out)?;
    Ok(format!("wrote {} ({} steps)\n", out.display(), t.len()))
}
