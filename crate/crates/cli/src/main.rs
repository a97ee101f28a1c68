//! `nnql`: simulate trajectories, build oracles, fit the learners and run
//! rate sweeps.
//!
//! Every subcommand takes `--config <file.toml>`. Values in the file take
//! precedence over the corresponding flags. Exit codes: 0 on success, 1 on
//! invalid input or any other failure, 2 when a fit stopped at its sweep cap
//! without converging.

mod settings;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nnql::harness::experiment_trajectory;
use nnql::harness::{query_grid, run_experiment, stationary_samples, sup_error, weighted_l1_error, ExperimentConfig};
use nnql::mdp::{StateVec, StepStream, Support, Trajectory};
use nnql::offline::{choose_k_offline, fit_offline, OfflineModel, OfflineParams};
use nnql::online::{KSchedule, OnlineLearner, OnlineParams};
use nnql::oracle::{grid_value_iteration, OracleQ};
use nnql::seeded_rng;

use settings::{resolve, Flags};

/// Exit status for a fit that hit its sweep cap.
const EXIT_NONCONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "nnql", version, about = "Nearest-neighbour Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Solve for Q* on a lattice and write the table.
    Oracle(OracleArgs),
    /// Fit the offline estimator on a trajectory file.
    FitOffline(FitOfflineArgs),
    /// Stream a trajectory file through the online learner.
    RunOnline(RunOnlineArgs),
    /// Compare a saved model with an oracle.
    Evaluate(EvaluateArgs),
    /// Run a full experiment sweep.
    RateSweep(RateSweepArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// Environment: box, ar1 or constant.
    #[arg(long = "env")]
    env_name: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Reward noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    noise_clip: Option<f64>,
    /// Behaviour policy: uniform, tilted or fixed.
    #[arg(long)]
    policy: Option<String>,
}

impl EnvArgs {
    fn flags(&self, f: &mut Flags) {
        f.set("env.name", self.env_name.clone());
        f.set("env.dim", self.dim);
        f.set("env.sigma", self.sigma);
        f.set("env.noise_clip", self.noise_clip);
        f.set("policy.name", self.policy.clone());
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory length T.
    #[arg(long)]
    steps: Option<usize>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    gamma: Option<f64>,
    /// Lattice spacing.
    #[arg(long)]
    resolution: Option<f64>,
    /// Value-iteration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitOfflineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    num_actions: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Neighbour count; defaults to ⌈T^{2/(d+2)}⌉.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    fix_tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Reward bound R used by the default tolerance.
    #[arg(long)]
    reward_bound: Option<f64>,
    /// Distance: euclidean, max or manhattan.
    #[arg(long)]
    norm: Option<String>,
    /// Output CSV of step values; the JSON sidecar goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunOnlineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    num_actions: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Window parameter; defaults to γ^{(d+2)/(d+3)}.
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed neighbour count instead of the growing schedule.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    norm: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output checkpoint CSV; the JSON sidecar goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    /// Saved model CSV (offline values or online checkpoint).
    #[arg(long)]
    model: Option<PathBuf>,
    /// offline or online.
    #[arg(long)]
    kind: Option<String>,
    /// Trajectory the offline model was fitted on.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    points_per_dim: Option<usize>,
    #[arg(long)]
    stationary_samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RateSweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the stationary sample set.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Fill the runtime_ms column (makes the records file run-dependent).
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Oracle(a) => oracle(a),
        Command::FitOffline(a) => fit_offline_cmd(a),
        Command::RunOnline(a) => run_online(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RateSweep(a) => rate_sweep(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: stopped at the sweep cap before converging");
            ExitCode::from(EXIT_NONCONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| anyhow!("--seed is required for this command"))
}

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    a.env.flags(&mut f);
    f.set("seed", a.seed);
    f.set("steps", a.steps);
    f.set_path("out", a.out.as_deref());
    let cfg: settings::Simulate = resolve(f, a.config.as_deref())?;
    let seed = require_seed(cfg.seed)?;
    let env = cfg.env.build()?;
    let policy = cfg.policy.build(env.as_ref())?;
    let traj = experiment_trajectory(env.as_ref(), &policy, cfg.steps, seed)?;
    traj.write_csv(output(cfg.out.as_deref())?)?;
    Ok(Outcome::Done)
}

fn oracle(a: OracleArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    a.env.flags(&mut f);
    f.set("gamma", a.gamma);
    f.set("resolution", a.resolution);
    f.set("tol", a.tol);
    f.set_path("out", a.out.as_deref());
    let cfg: settings::Oracle = resolve(f, a.config.as_deref())?;
    let env = cfg.env.build()?;
    let oracle = grid_value_iteration(env.as_ref(), cfg.resolution, cfg.gamma, cfg.tol)?;
    oracle.write(output(cfg.out.as_deref())?)?;
    eprintln!("oracle: {} nodes, {} sweeps, residual {:e}", oracle.grid().len(), oracle.sweeps(), oracle.residual());
    Ok(Outcome::Done)
}

fn read_trajectory(path: &Path, num_actions: Option<usize>) -> Result<Trajectory> {
    Trajectory::read_csv(open(path)?, num_actions).with_context(|| format!("reading {}", path.display()))
}

fn fit_offline_cmd(a: FitOfflineArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    f.set_path("trajectory", a.trajectory.as_deref());
    f.set("num_actions", a.num_actions);
    f.set("gamma", a.gamma);
    f.set("k", a.k);
    f.set("fix_tol", a.fix_tol);
    f.set("max_sweeps", a.max_sweeps);
    f.set("reward_bound", a.reward_bound);
    f.set("norm", a.norm.clone());
    f.set_path("out", a.out.as_deref());
    let cfg: settings::FitOffline = resolve(f, a.config.as_deref())?;
    let traj = read_trajectory(&cfg.trajectory, cfg.num_actions)?;
    let k = cfg.k.unwrap_or_else(|| choose_k_offline(traj.len(), traj.dim()));
    let mut params = OfflineParams::new(k, cfg.gamma, cfg.reward_bound);
    if let Some(tol) = cfg.fix_tol {
        params.fix_tol = tol;
    }
    params.max_sweeps = cfg.max_sweeps;
    params.norm = cfg.norm;
    let model = fit_offline(&traj, &params)?;
    model.write_csv(output(Some(&cfg.out))?)?;
    model.write_sidecar(output(Some(&sidecar_path(&cfg.out)))?)?;
    eprintln!("offline: k = {}, {} sweeps, final gap {:e}", params.k, model.sweeps_run(), model.final_gap());
    Ok(if model.converged() { Outcome::Done } else { Outcome::NotConverged })
}

fn run_online(a: RunOnlineArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    f.set_path("trajectory", a.trajectory.as_deref());
    f.set("num_actions", a.num_actions);
    f.set("gamma", a.gamma);
    f.set("beta", a.beta);
    f.set("k", a.k);
    f.set("norm", a.norm.clone());
    f.set_path("resume", a.resume.as_deref());
    f.set_path("out", a.out.as_deref());
    let cfg: settings::RunOnline = resolve(f, a.config.as_deref())?;

    let mut learner = match &cfg.resume {
        Some(path) => OnlineLearner::resume(open(path)?, open(&sidecar_path(path))?)
            .with_context(|| format!("resuming from {}", path.display()))?,
        None => {
            let probe = StepStream::new(open(&cfg.trajectory)?)?;
            let num_actions = match cfg.num_actions {
                Some(n) => n,
                None => read_trajectory(&cfg.trajectory, None)?.num_actions(),
            };
            let mut params = OnlineParams::new(cfg.gamma, probe.dim());
            if let Some(b) = cfg.beta {
                params.beta = b;
            }
            if let Some(k) = cfg.k {
                params.k_schedule = KSchedule::Fixed(k);
            }
            params.norm = cfg.norm;
            OnlineLearner::new(params, num_actions)?
        }
    };
    let mut stream = StepStream::new(open(&cfg.trajectory)?)?;
    let start = learner.t_now();
    while let Some((step, next)) = stream.next_transition()? {
        if step.t <= start {
            continue;
        }
        learner.step(&step, &next)?;
    }
    learner.write_checkpoint(output(Some(&cfg.out))?)?;
    learner.write_sidecar(output(Some(&sidecar_path(&cfg.out)))?)?;
    let diag = learner.diagnostics();
    eprintln!(
        "online: t = {}, truncated updates {}, empty-window fallbacks {}",
        learner.t_now(),
        diag.truncated,
        diag.empty
    );
    Ok(Outcome::Done)
}

fn evaluate(a: EvaluateArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    a.env.flags(&mut f);
    f.set_path("model", a.model.as_deref());
    f.set("kind", a.kind.clone());
    f.set_path("trajectory", a.trajectory.as_deref());
    f.set_path("oracle", a.oracle.as_deref());
    f.set("seed", a.seed);
    f.set("points_per_dim", a.points_per_dim);
    f.set("stationary_samples", a.stationary_samples);
    f.set_path("out", a.out.as_deref());
    let cfg: settings::Evaluate = resolve(f, a.config.as_deref())?;
    let seed = require_seed(cfg.seed)?;
    let oracle = OracleQ::read(open(&cfg.oracle)?).context("reading the oracle")?;
    let env = cfg.env.build()?;
    let policy = cfg.policy.build(env.as_ref())?;
    if env.name() != oracle.env_name() || env.dim() != oracle.dim() {
        bail!("oracle was built for {} in {} dimensions", oracle.env_name(), oracle.dim());
    }
    let mut rng = seeded_rng(seed, 0);
    let samples = stationary_samples(env.as_ref(), &policy, cfg.burn_in, cfg.stationary_samples, cfg.thin, &mut rng)?;
    let grid: Vec<StateVec> = match env.support() {
        Support::Bounded { lo, hi } => query_grid(&lo, &hi, cfg.points_per_dim * env.dim()),
        Support::Unbounded => samples.clone(),
    };

    let (sup, wl1) = match cfg.kind.as_str() {
        "offline" => {
            let traj_path = cfg.trajectory.as_ref().ok_or_else(|| anyhow!("offline models need --trajectory"))?;
            let traj = read_trajectory(traj_path, Some(env.num_actions()))?;
            let model = OfflineModel::load(open(&cfg.model)?, open(&sidecar_path(&cfg.model))?, &traj)?;
            let est = |s: &StateVec, a: usize| model.evaluate(s, a).map(|e| e.value);
            (sup_error(est, &oracle, &grid)?, weighted_l1_error(est, &oracle, &samples)?)
        }
        "online" => {
            let learner = OnlineLearner::resume(open(&cfg.model)?, open(&sidecar_path(&cfg.model))?)?;
            let est = |s: &StateVec, a: usize| learner.query(s, a).map(|e| e.value);
            (sup_error(est, &oracle, &grid)?, weighted_l1_error(est, &oracle, &samples)?)
        }
        other => bail!("unknown model kind {other:?}; expected offline or online"),
    };
    let mut out = csv::Writer::from_writer(output(cfg.out.as_deref())?);
    out.write_record(["metric", "value", "used", "skipped"])?;
    for (name, m) in [("sup_err", sup), ("w_l1_err", wl1)] {
        out.write_record([name.to_string(), m.value.to_string(), m.used.to_string(), m.skipped.to_string()])?;
    }
    out.flush()?;
    Ok(Outcome::Done)
}

fn rate_sweep(a: RateSweepArgs) -> Result<Outcome> {
    let mut f = Flags::default();
    f.set("query.sample_seed", a.seed);
    f.set_path("output.records", a.records.as_deref());
    f.set_path("output.summary", a.summary.as_deref());
    f.set_path("output.metadata", a.metadata.as_deref());
    if a.timing {
        f.set("timing", Some(true));
    }
    let config_path = a.config.as_deref().ok_or_else(|| anyhow!("rate-sweep needs --config"))?;
    let cfg: ExperimentConfig = resolve(f, Some(config_path))?;
    require_seed(cfg.query.sample_seed)?;
    let report = run_experiment(&cfg)?;
    if cfg.output.records.is_none() {
        report.write_records(io::stdout().lock())?;
    }
    report.write_outputs(&cfg)?;
    for fit in &report.fits {
        eprintln!(
            "{} gamma={} {}: slope {:.4} ± {:.4}",
            fit.alg.as_str(),
            fit.gamma,
            fit.metric.as_str(),
            fit.fit.slope,
            fit.fit.half_width
        );
    }
    Ok(if report.any_nonconverged() { Outcome::NotConverged } else { Outcome::Done })
}
