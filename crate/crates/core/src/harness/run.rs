use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::fit::{median, rate_fit_seeds, RateFit};
use crate::harness::metrics::{
    burn_in_diagnostic, query_grid, stationary_samples, sup_error, weighted_l1_error, BurnInDiagnostic,
};
use crate::mdp::{sample_trajectory, Environment, Policy, StateVec, Support, Trajectory};
use crate::norm::Norm;
use crate::offline::{choose_k_offline, fit_offline, OfflineParams};
use crate::online::{warmup_threshold, KSchedule, OnlineLearner, OnlineParams};
use crate::oracle::{grid_value_iteration, OracleQ};
use crate::seeded_rng;

/// Stream id of trajectories; the stationary sample set uses another.
const TRAJECTORY_STREAM: u64 = 1 << 32;
const SAMPLE_STREAM: u64 = 2 << 32;

/// Column names of the records file.
pub const RECORD_HEADER: [&str; 11] =
    ["env", "alg", "d", "gamma", "T", "seed", "k", "beta", "sup_err", "w_l1_err", "runtime_ms"];

/// One `(algorithm, γ, T, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub env: String,
    pub alg: Algorithm,
    pub d: usize,
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    /// `k` for offline runs, `k(T)` for online runs.
    pub k: usize,
    pub beta: Option<f64>,
    pub sup_err: f64,
    pub w_l1_err: f64,
    pub runtime_ms: Option<f64>,
    #[serde(skip)]
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Sup,
    WeightedL1,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Sup => "sup_err",
            MetricKind::WeightedL1 => "w_l1_err",
        }
    }

    fn of(&self, r: &Record) -> f64 {
        match self {
            MetricKind::Sup => r.sup_err,
            MetricKind::WeightedL1 => r.w_l1_err,
        }
    }
}

/// Slope of one metric for one algorithm and discount.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub alg: Algorithm,
    pub gamma: f64,
    pub metric: MetricKind,
    pub fit: RateFit,
    pub seed_slopes: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleInfo {
    pub gamma: f64,
    pub residual: f64,
    pub tol: f64,
    pub sweeps: usize,
    pub nodes: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub truncation_mass_loss: Option<f64>,
}

/// Diagnostics that are not part of the data files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub oracles: Vec<OracleInfo>,
    /// `(γ, T, t_c)` for online runs.
    pub warmup: Vec<(f64, usize, f64)>,
    pub burn_in: BurnInDiagnostic,
    pub query_points: usize,
    pub stationary_samples: usize,
    pub skipped_samples: usize,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub records: Vec<Record>,
    pub fits: Vec<FitSummary>,
    pub metadata: RunMetadata,
}

impl RateReport {
    /// Median of `metric` over seeds at each `T`, in increasing `T`.
    pub fn medians(&self, alg: Algorithm, gamma: f64, metric: MetricKind) -> Vec<(usize, f64)> {
        let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.alg == alg && r.gamma == gamma) {
            by_t.entry(r.t).or_default().push(metric.of(r));
        }
        by_t.into_iter().map(|(t, mut v)| (t, median(&mut v))).collect()
    }

    pub fn fit(&self, alg: Algorithm, gamma: f64, metric: MetricKind) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.alg == alg && f.gamma == gamma && f.metric == metric)
    }

    /// True when any offline fit hit its sweep cap.
    pub fn any_nonconverged(&self) -> bool {
        self.metadata.nonconverged > 0
    }

    /// Writes the records CSV with the fixed column order.
    pub fn write_records<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RECORD_HEADER)?;
        for r in &self.records {
            out.write_record([
                r.env.clone(),
                r.alg.as_str().to_string(),
                r.d.to_string(),
                r.gamma.to_string(),
                r.t.to_string(),
                r.seed.to_string(),
                r.k.to_string(),
                r.beta.map_or(String::new(), |b| b.to_string()),
                r.sup_err.to_string(),
                r.w_l1_err.to_string(),
                r.runtime_ms.map_or(String::new(), |t| format!("{t:.3}")),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes one row per fitted slope.
    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "env",
            "alg",
            "d",
            "gamma",
            "metric",
            "slope",
            "intercept",
            "half_width",
            "seeds",
            "target_slope",
        ])?;
        let (env, d) = self.records.first().map_or((String::new(), 1), |r| (r.env.clone(), r.d));
        for f in &self.fits {
            out.write_record([
                env.clone(),
                f.alg.as_str().to_string(),
                d.to_string(),
                f.gamma.to_string(),
                f.metric.as_str().to_string(),
                f.fit.slope.to_string(),
                f.fit.intercept.to_string(),
                f.fit.half_width.to_string(),
                f.seed_slopes.len().to_string(),
                (-1.0 / (d as f64 + 2.0)).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the files named in `config.output`.
    pub fn write_outputs(&self, config: &ExperimentConfig) -> Result<()> {
        if let Some(p) = &config.output.records {
            self.write_records(create(p)?)?;
        }
        if let Some(p) = &config.output.summary {
            self.write_summary(create(p)?)?;
        }
        if let Some(p) = &config.output.metadata {
            serde_json::to_writer_pretty(create(p)?, &self.metadata)?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::File::create(path)?)
}

/// Trajectory of length `T` for a seed; identical across `γ` and
/// algorithms.
pub fn experiment_trajectory(env: &dyn Environment, policy: &Policy, steps: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = seeded_rng(seed, TRAJECTORY_STREAM + steps as u64);
    sample_trajectory(env, policy, steps, env.initial_state(), &mut rng)
}

fn cache_path(dir: &Path, env: &dyn Environment, gamma: f64, h: f64, tol: f64) -> PathBuf {
    dir.join(format!("oracle_{}_d{}_g{gamma}_h{h}_tol{tol}.csv", env.name(), env.dim()))
}

/// Builds the oracle for `γ`, reusing a cached file when one matches.
pub fn cached_oracle(env: &dyn Environment, gamma: f64, h: f64, tol: f64, cache: Option<&Path>) -> Result<OracleQ> {
    if let Some(dir) = cache {
        let path = cache_path(dir, env, gamma, h, tol);
        if path.exists() {
            let oracle = OracleQ::read(fs::File::open(&path)?)?;
            let matches = oracle.env_name() == env.name()
                && oracle.dim() == env.dim()
                && oracle.gamma() == gamma
                && oracle.resolution() == h
                && oracle.tol() == tol;
            if matches {
                return Ok(oracle);
            }
        }
        let oracle = grid_value_iteration(env, h, gamma, tol)?;
        fs::create_dir_all(dir)?;
        oracle.write(std::io::BufWriter::new(fs::File::create(&path)?))?;
        return Ok(oracle);
    }
    grid_value_iteration(env, h, gamma, tol)
}

struct Cell {
    alg_idx: usize,
    gamma_idx: usize,
    t_idx: usize,
    seed_idx: usize,
    record: Record,
}

/// Runs every `(algorithm, γ, T, seed)` cell of the config and fits the
/// error rates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RateReport> {
    config.validate()?;
    let env = config.env.build()?;
    let env = env.as_ref();
    let policy = config.policy.build(env)?;
    let d = env.dim();
    let r_bound = env.constants(Norm::Euclidean).reward_bound;

    let oracles: Vec<OracleQ> = config
        .gamma_grid
        .iter()
        .map(|&g| {
            cached_oracle(env, g, config.oracle.resolution, config.oracle.tol, config.oracle.cache_dir.as_deref())
                .map_err(|e| e.with_context(format!("oracle for gamma = {g}")))
        })
        .collect::<Result<_>>()?;

    let q = &config.query;
    let mut sample_rng = seeded_rng(q.sample_seed.unwrap_or(0), SAMPLE_STREAM);
    let samples = stationary_samples(env, &policy, q.burn_in, q.stationary_samples, q.thin, &mut sample_rng)?;
    let burn_in = burn_in_diagnostic(env, &policy, q.burn_in, q.stationary_samples, q.thin, &mut sample_rng)?;
    let grid_points = match env.support() {
        Support::Bounded { lo, hi } => query_grid(&lo, &hi, q.points_per_dim * d),
        Support::Unbounded => samples.clone(),
    };

    let jobs: Vec<(usize, usize)> =
        (0..config.seeds.len()).flat_map(|s| (0..config.t_grid.len()).map(move |t| (s, t))).collect();
    let cells: Vec<Vec<Cell>> = jobs
        .par_iter()
        .map(|&(seed_idx, t_idx)| {
            let seed = config.seeds[seed_idx];
            let steps = config.t_grid[t_idx];
            let ctx = |e: Error| e.with_context(format!("T = {steps}, seed = {seed}"));
            let traj = experiment_trajectory(env, &policy, steps, seed).map_err(ctx)?;
            let mut cells = Vec::new();
            for (gamma_idx, (&gamma, oracle)) in config.gamma_grid.iter().zip(&oracles).enumerate() {
                for (alg_idx, &alg) in config.algorithms.iter().enumerate() {
                    let ctx = |e: Error| {
                        e.with_context(format!("{} T = {steps}, gamma = {gamma}, seed = {seed}", alg.as_str()))
                    };
                    let record =
                        run_cell(config, env, &traj, alg, gamma, seed, r_bound, oracle, &grid_points, &samples)
                            .map_err(ctx)?;
                    cells.push(Cell { alg_idx, gamma_idx, t_idx, seed_idx, record });
                }
            }
            Ok(cells)
        })
        .collect::<Result<_>>()?;
    let mut cells: Vec<Cell> = cells.into_iter().flatten().collect();
    cells.sort_by_key(|c| (c.alg_idx, c.gamma_idx, c.t_idx, c.seed_idx));
    let records: Vec<Record> = cells.into_iter().map(|c| c.record).collect();

    let mut fits = Vec::new();
    if config.t_grid.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2 {
        for &alg in &config.algorithms {
            for &gamma in &config.gamma_grid {
                for metric in [MetricKind::Sup, MetricKind::WeightedL1] {
                    let pts: Vec<(usize, u64, f64)> = records
                        .iter()
                        .filter(|r| r.alg == alg && r.gamma == gamma)
                        .map(|r| (r.t, r.seed, metric.of(r)))
                        .collect();
                    // a zero error (exact recovery) has no logarithm; skip the fit
                    if let Ok((fit, seed_slopes)) = rate_fit_seeds(&pts) {
                        fits.push(FitSummary { alg, gamma, metric, fit, seed_slopes });
                    }
                }
            }
        }
    }

    let mut warmup = Vec::new();
    if config.algorithms.contains(&Algorithm::Online) {
        for &gamma in &config.gamma_grid {
            let beta = online_params(config, gamma, d).beta;
            for &t in &config.t_grid {
                warmup.push((gamma, t, warmup_threshold(t, beta, env.constants(Norm::Euclidean).mixing, d)));
            }
        }
    }
    let metadata = RunMetadata {
        oracles: config
            .gamma_grid
            .iter()
            .zip(&oracles)
            .map(|(&gamma, o)| OracleInfo {
                gamma,
                residual: o.residual(),
                tol: o.tol(),
                sweeps: o.sweeps(),
                nodes: o.grid().len(),
                lo: o.grid().lo.clone(),
                hi: o.grid().hi.clone(),
                truncation_mass_loss: o.truncation().map(|t| t.mass_loss),
            })
            .collect(),
        warmup,
        burn_in,
        query_points: grid_points.len(),
        stationary_samples: samples.len(),
        skipped_samples: samples.iter().filter(|s| !oracles[0].contains(s)).count(),
        nonconverged: records.iter().filter(|r| !r.converged).count(),
    };
    Ok(RateReport { records, fits, metadata })
}

fn online_params(config: &ExperimentConfig, gamma: f64, dim: usize) -> OnlineParams {
    let mut p = OnlineParams::new(gamma, dim);
    if let Some(b) = config.overrides.beta {
        p.beta = b;
    }
    if let Some(k) = config.overrides.k {
        p.k_schedule = KSchedule::Fixed(k);
    }
    p
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &ExperimentConfig,
    env: &dyn Environment,
    traj: &Trajectory,
    alg: Algorithm,
    gamma: f64,
    seed: u64,
    reward_bound: f64,
    oracle: &OracleQ,
    grid_points: &[StateVec],
    samples: &[StateVec],
) -> Result<Record> {
    let steps = traj.len();
    let d = env.dim();
    let start = Instant::now();
    let (k, beta, sup, wl1, converged) = match alg {
        Algorithm::Offline => {
            let k = config.overrides.k.unwrap_or_else(|| choose_k_offline(steps, d));
            let mut params = OfflineParams::new(k, gamma, reward_bound);
            params.max_sweeps = config.max_sweeps;
            let model = fit_offline(traj, &params)?;
            let est = |s: &StateVec, a: usize| model.evaluate(s, a).map(|e| e.value);
            let sup = sup_error(est, oracle, grid_points)?.value;
            let wl1 = weighted_l1_error(est, oracle, samples)?.value;
            (k, None, sup, wl1, model.converged())
        }
        Algorithm::Online => {
            let params = online_params(config, gamma, d);
            let mut learner = OnlineLearner::new(params, env.num_actions())?;
            learner.run(traj)?;
            let est = |s: &StateVec, a: usize| learner.query(s, a).map(|e| e.value);
            let sup = sup_error(est, oracle, grid_points)?.value;
            let wl1 = weighted_l1_error(est, oracle, samples)?.value;
            (params.k_at(steps), Some(params.beta), sup, wl1, true)
        }
    };
    let runtime_ms = config.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    Ok(Record {
        env: env.name().to_string(),
        alg,
        d,
        gamma,
        t: steps,
        seed,
        k,
        beta,
        sup_err: sup,
        w_l1_err: wl1,
        runtime_ms,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::online::{schedule_beta, schedule_k_online};

    fn small_config(algs: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
algorithms = [{algs}]
t_grid = [256, 512, 1024]
gamma_grid = [0.5, 0.8]
seeds = [3]

[env]
name = "box"
sigma = 0.1

[query]
points_per_dim = 50
stationary_samples = 100
burn_in = 50
thin = 2

[oracle]
resolution = 0.01
"#
        ))
        .unwrap()
    }

    #[test]
    fn bookkeeping_and_schedules() {
        let config = small_config("\"offline\", \"online\"");
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.records.len(), 2 * 3 * 2);
        for r in &report.records {
            match r.alg {
                Algorithm::Offline => {
                    assert_eq!(r.k, choose_k_offline(r.t, 1));
                    assert!(r.beta.is_none());
                }
                Algorithm::Online => {
                    let beta = schedule_beta(r.gamma, 1);
                    assert_eq!(r.beta, Some(beta));
                    assert_eq!(r.k, schedule_k_online(r.t, beta, 1));
                }
            }
            // sup over a grid covering the box dominates the sample mean
            assert!(r.sup_err >= r.w_l1_err);
        }
        assert_eq!(report.fits.len(), 2 * 2 * 2);
        let mut csv = Vec::new();
        report.write_records(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), RECORD_HEADER.join(","));
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let config = small_config("\"offline\"");
        let write = |r: &RateReport| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            r.write_records(&mut a).unwrap();
            r.write_summary(&mut b).unwrap();
            (a, b)
        };
        let first = write(&run_experiment(&config).unwrap());
        let second = write(&run_experiment(&config).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn oracle_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let env = crate::mdp::BoxEnv::new(1, 0.0).unwrap();
        let a = cached_oracle(&env, 0.8, 0.05, 1e-9, Some(dir.path())).unwrap();
        let b = cached_oracle(&env, 0.8, 0.05, 1e-9, Some(dir.path())).unwrap();
        assert_eq!(a.header(), b.header());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
