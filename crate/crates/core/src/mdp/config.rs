//! Key-value selection of environments and policies.
//!
//! ```toml
//! seed = 7
//!
//! [env]
//! name = "box"      # box | ar1 | constant
//! dim = 1
//! sigma = 0.1
//! # rewards = [0.0, 1.0]   # constant only
//! # noise_clip = 0.5
//!
//! [policy]
//! name = "uniform"  # uniform | tilted | fixed
//! # probs = [0.3, 0.7]    # fixed only
//! # slopes = [2.0, -2.0]  # tilted only
//! # floor = 0.1           # tilted only
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Ar1Env, BoxEnv, ConstantEnv, Environment, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "uniform")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { name: uniform(), probs: None, slopes: None, floor: None }
    }
}

/// Top-level simulation config: environment, policy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub seed: Option<u64>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

fn one() -> usize {
    1
}

fn uniform() -> String {
    "uniform".into()
}

impl EnvConfig {
    pub fn build(&self) -> Result<Arc<dyn Environment>> {
        let env: Arc<dyn Environment> = match self.name.as_str() {
            "box" => {
                let mut e = BoxEnv::new(self.dim, self.sigma)?;
                if let Some(c) = self.noise_clip {
                    e = e.with_noise_clip(c);
                }
                Arc::new(e)
            }
            "ar1" => {
                let mut e = Ar1Env::new(self.dim, self.sigma)?;
                if let Some(c) = self.noise_clip {
                    e = e.with_noise_clip(c);
                }
                Arc::new(e)
            }
            "constant" => {
                let rewards = self.rewards.clone().unwrap_or_else(|| vec![1.0, 1.0]);
                Arc::new(ConstantEnv::new(self.dim, rewards, self.sigma)?)
            }
            other => return Err(Error::invalid(format!("unknown environment {other:?}"))),
        };
        Ok(env)
    }
}

impl PolicyConfig {
    pub fn build(&self, env: &dyn Environment) -> Result<Policy> {
        let (d, n) = (env.dim(), env.num_actions());
        match self.name.as_str() {
            "uniform" => Policy::uniform(d, n),
            "fixed" => {
                let probs = self.probs.clone().ok_or_else(|| Error::invalid("fixed policy needs `probs`"))?;
                if probs.len() != n {
                    return Err(Error::invalid("policy probs length differs from action count"));
                }
                Policy::fixed(d, probs)
            }
            "tilted" => {
                let slopes = self
                    .slopes
                    .clone()
                    .unwrap_or_else(|| (0..n).map(|a| if a % 2 == 0 { 2.0 } else { -2.0 }).collect());
                if slopes.len() != n {
                    return Err(Error::invalid("policy slopes length differs from action count"));
                }
                Policy::tilted(d, slopes, self.floor.unwrap_or(0.1))
            }
            other => Err(Error::invalid(format!("unknown policy {other:?}"))),
        }
    }
}
