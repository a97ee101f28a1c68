use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::config::{EnvConfig, PolicyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Offline,
    Online,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Offline => "offline",
            Algorithm::Online => "online",
        }
    }
}

/// Overrides of the default `k` and `β` schedules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Fixed neighbour count for both algorithms.
    pub k: Option<usize>,
    pub beta: Option<f64>,
}

/// Query points for the sup metric and stationary samples for the weighted
/// metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    /// Grid points per dimension for bounded environments.
    #[serde(default = "default_points")]
    pub points_per_dim: usize,
    #[serde(default = "default_samples")]
    pub stationary_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Seed of the stationary sample set; shared by every cell. Defaults
    /// to 0.
    pub sample_seed: Option<u64>,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            points_per_dim: default_points(),
            stationary_samples: default_samples(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            sample_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_oracle_tol")]
    pub tol: f64,
    /// Directory where oracles are cached between runs.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { resolution: default_resolution(), tol: default_oracle_tol(), cache_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-cell records.
    pub records: Option<PathBuf>,
    /// Fitted slopes.
    pub summary: Option<PathBuf>,
    /// Run metadata (oracle residuals, diagnostics) as JSON.
    pub metadata: Option<PathBuf>,
}

/// A full rate sweep.
///
/// ```toml
/// algorithms = ["offline", "online"]
/// t_grid = [4096, 8192, 16384]
/// gamma_grid = [0.8]
/// seeds = [1, 2, 3]
///
/// [env]
/// name = "box"
/// sigma = 0.1
///
/// [query]
/// points_per_dim = 500
///
/// [oracle]
/// resolution = 0.001
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub t_grid: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub query: QueryConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Cap on offline sweeps.
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    /// Fill the `runtime_ms` column.
    #[serde(default)]
    pub timing: bool,
}

fn default_points() -> usize {
    500
}
fn default_samples() -> usize {
    2000
}
fn default_burn_in() -> usize {
    1000
}
fn default_thin() -> usize {
    10
}
fn default_resolution() -> f64 {
    1e-3
}
fn default_oracle_tol() -> f64 {
    1e-8
}
fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Offline]
}
fn default_max_sweeps() -> usize {
    crate::offline::OfflineParams::DEFAULT_MAX_SWEEPS
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        if self.t_grid.is_empty() || self.gamma_grid.is_empty() || self.algorithms.is_empty() {
            return Err(Error::invalid("t_grid, gamma_grid and algorithms must not be empty"));
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(Error::invalid(format!("gamma {g} is not in (0, 1)")));
        }
        if let Some(b) = self.overrides.beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("beta {b} is not in (0, 1)")));
            }
        }
        if let Some(k) = self.overrides.k {
            if k == 0 {
                return Err(Error::invalid("k override must be >= 1"));
            }
            if let Some(t) = self.t_grid.iter().find(|t| **t < k) {
                return Err(Error::invalid(format!("T = {t} is smaller than k = {k}")));
            }
        }
        if self.t_grid.contains(&0) {
            return Err(Error::invalid("every T must be >= 1"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.query.points_per_dim == 0 || self.query.stationary_samples == 0 || self.query.thin == 0 {
            return Err(Error::invalid("query sizes must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(
            "t_grid = [100, 200]\ngamma_grid = [0.8]\nseeds = [1]\n[env]\nname = \"box\"\n",
        )
        .unwrap();
        assert_eq!(c.algorithms, vec![Algorithm::Offline]);
        assert_eq!(c.query.stationary_samples, 2000);
        assert!(c.output.records.is_none());
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = "gamma_grid = [0.8]\n[env]\nname = \"box\"\n";
        assert!(ExperimentConfig::from_toml(&format!("t_grid = [10]\nseeds = []\n{base}")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("t_grid = [10]\nseeds = [1, 1]\n{base}")).is_err());
        let k = "t_grid = [10]\nseeds = [1]\ngamma_grid = [0.8]\n[overrides]\nk = 20\n[env]\nname = \"box\"\n";
        assert!(ExperimentConfig::from_toml(k).is_err());
        assert!(ExperimentConfig::from_toml("t_grid = [10]\nseeds = [1]\ngamma_grid = [1.0]\n[env]\nname = \"box\"\n")
            .is_err());
        assert!(ExperimentConfig::from_toml(&format!("t_grid = [10]\nseeds = [1]\nbogus = 1\n{base}")).is_err());
    }
}
