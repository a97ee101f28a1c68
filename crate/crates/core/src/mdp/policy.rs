use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::StateVec;

type ProbsFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
enum Rule {
    Uniform,
    Fixed(Vec<f64>),
    /// `π(a|s) = floor + (1 - n·floor)·softmax_a(slope_a · mean(s))`
    Tilted {
        slopes: Vec<f64>,
    },
    Custom(Arc<ProbsFn>),
}

/// A fixed behaviour policy whose action probabilities never drop below a
/// declared floor `π₀ > 0`.
#[derive(Clone)]
pub struct Policy {
    name: String,
    dim: usize,
    num_actions: usize,
    floor: f64,
    rule: Rule,
}

const SUM_TOL: f64 = 1e-12;

impl Policy {
    /// Uniform over `num_actions`; the floor is `1/num_actions`.
    pub fn uniform(dim: usize, num_actions: usize) -> Result<Self> {
        check_shape(dim, num_actions)?;
        Ok(Policy { name: "uniform".into(), dim, num_actions, floor: 1.0 / num_actions as f64, rule: Rule::Uniform })
    }

    /// State-independent probabilities. Every entry must be positive.
    pub fn fixed(dim: usize, probs: Vec<f64>) -> Result<Self> {
        check_shape(dim, probs.len())?;
        validate_probs(&probs, f64::MIN_POSITIVE)?;
        let floor = probs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Policy { name: "fixed".into(), dim, num_actions: probs.len(), floor, rule: Rule::Fixed(probs) })
    }

    /// State-dependent policy mixing a softmax over `slope_a · mean(s)` with
    /// a uniform floor.
    pub fn tilted(dim: usize, slopes: Vec<f64>, floor: f64) -> Result<Self> {
        let n = slopes.len();
        check_shape(dim, n)?;
        if !(floor > 0.0 && floor * n as f64 <= 1.0) {
            return Err(Error::invalid(format!("floor {floor} must lie in (0, 1/{n}]")));
        }
        if slopes.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite policy slope"));
        }
        Ok(Policy { name: "tilted".into(), dim, num_actions: n, floor, rule: Rule::Tilted { slopes } })
    }

    /// Arbitrary probability map. Each evaluation is checked against `floor`.
    pub fn custom<F>(dim: usize, num_actions: usize, floor: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        check_shape(dim, num_actions)?;
        if !(floor > 0.0 && floor * num_actions as f64 <= 1.0 + SUM_TOL) {
            return Err(Error::invalid(format!("floor {floor} must be positive")));
        }
        Ok(Policy { name: "custom".into(), dim, num_actions, floor, rule: Rule::Custom(Arc::new(f)) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// The lower bound `π₀` on every action probability.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn probs(&self, s: &StateVec) -> Result<Vec<f64>> {
        s.check_dim(self.dim)?;
        let p = match &self.rule {
            Rule::Uniform => vec![1.0 / self.num_actions as f64; self.num_actions],
            Rule::Fixed(p) => p.clone(),
            Rule::Tilted { slopes } => {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                let logits: Vec<f64> = slopes.iter().map(|b| b * m).collect();
                let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = w.iter().sum();
                let free = 1.0 - self.floor * self.num_actions as f64;
                w.iter().map(|wi| self.floor + free * wi / z).collect()
            }
            Rule::Custom(f) => {
                let p = f(s);
                if p.len() != self.num_actions {
                    return Err(Error::invalid("custom policy returned wrong length"));
                }
                validate_probs(&p, self.floor)?;
                p
            }
        };
        Ok(p)
    }
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Policy")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("num_actions", &self.num_actions)
            .field("floor", &self.floor)
            .finish()
    }
}

fn check_shape(dim: usize, num_actions: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("policy dimension must be >= 1"));
    }
    if num_actions == 0 {
        return Err(Error::invalid("policy needs at least one action"));
    }
    Ok(())
}

fn validate_probs(p: &[f64], floor: f64) -> Result<()> {
    if let Some(bad) = p.iter().find(|x| !(x.is_finite() && **x >= floor)) {
        return Err(Error::invalid(format!("action probability {bad} below floor {floor}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("action probabilities sum to {sum}")));
    }
    Ok(())
}

/// Draws `A ~ π(·|s)` by inverting the cumulative distribution with one
/// uniform draw.
pub fn sample_action<R: Rng + ?Sized>(policy: &Policy, s: &StateVec, rng: &mut R) -> Result<usize> {
    let probs = policy.probs(s)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    // u landed in the rounding gap above the last partial sum
    Ok(probs.len() - 1)
}
