//! Merging of command-line flags with a TOML config file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nnql::mdp::config::{EnvConfig, PolicyConfig};
use nnql::Norm;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use toml::{Table, Value};

/// Flag values keyed by dotted config path.
#[derive(Default)]
pub struct Flags(Table);

impl Flags {
    pub fn set<T: FlagValue>(&mut self, key: &str, value: Option<T>) {
        let Some(value) = value else { return };
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut table = &mut self.0;
        for p in parts {
            table = table
                .entry(p)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("flag paths do not collide");
        }
        table.insert(last.to_string(), value.into_value());
    }

    pub fn set_path(&mut self, key: &str, value: Option<&Path>) {
        self.set(key, value.map(|p| p.to_string_lossy().into_owned()));
    }
}

pub trait FlagValue {
    fn into_value(self) -> Value;
}

impl FlagValue for usize {
    fn into_value(self) -> Value {
        Value::Integer(self as i64)
    }
}

impl FlagValue for u64 {
    fn into_value(self) -> Value {
        Value::Integer(self as i64)
    }
}

impl FlagValue for f64 {
    fn into_value(self) -> Value {
        Value::Float(self)
    }
}

impl FlagValue for bool {
    fn into_value(self) -> Value {
        Value::Boolean(self)
    }
}

impl FlagValue for String {
    fn into_value(self) -> Value {
        Value::String(self)
    }
}

fn overlay(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Deserializes `T` from the flags with the config file laid over them.
pub fn resolve<T: DeserializeOwned>(flags: Flags, config: Option<&Path>) -> Result<T> {
    let mut merged = flags.0;
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let file: Table =
            text.parse().map_err(nnql::Error::from).with_context(|| format!("parsing {}", path.display()))?;
        overlay(&mut merged, file);
    }
    T::deserialize(Value::Table(merged)).map_err(nnql::Error::from).context("invalid configuration")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulate {
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub seed: Option<u64>,
    pub steps: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oracle {
    pub env: EnvConfig,
    pub gamma: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_oracle_tol")]
    pub tol: f64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOffline {
    pub trajectory: PathBuf,
    pub num_actions: Option<usize>,
    pub gamma: f64,
    pub k: Option<usize>,
    pub fix_tol: Option<f64>,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "one")]
    pub reward_bound: f64,
    #[serde(default)]
    pub norm: Norm,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOnline {
    pub trajectory: PathBuf,
    pub num_actions: Option<usize>,
    pub gamma: f64,
    pub beta: Option<f64>,
    pub k: Option<usize>,
    #[serde(default)]
    pub norm: Norm,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluate {
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub model: PathBuf,
    pub kind: String,
    pub trajectory: Option<PathBuf>,
    pub oracle: PathBuf,
    pub seed: Option<u64>,
    #[serde(default = "default_points")]
    pub points_per_dim: usize,
    #[serde(default = "default_samples")]
    pub stationary_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub out: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn default_resolution() -> f64 {
    1e-3
}
fn default_oracle_tol() -> f64 {
    1e-8
}
fn default_max_sweeps() -> usize {
    nnql::offline::OfflineParams::DEFAULT_MAX_SWEEPS
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
