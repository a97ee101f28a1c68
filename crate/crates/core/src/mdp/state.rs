use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the `d`-dimensional continuous state space.
///
/// Construction rejects empty vectors and non-finite coordinates.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("state must have at least one coordinate"));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite state coordinate {bad}")));
        }
        Ok(StateVec(coords))
    }

    /// Skips validation. Callers guarantee finiteness.
    pub(crate) fn from_trusted(coords: Vec<f64>) -> Self {
        debug_assert!(!coords.is_empty() && coords.iter().all(|c| c.is_finite()));
        StateVec(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::invalid(format!("state has dimension {}, expected {dim}", self.dim())));
        }
        Ok(())
    }
}

impl Deref for StateVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StateVec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVec::new(v)
    }
}

impl From<StateVec> for Vec<f64> {
    fn from(s: StateVec) -> Vec<f64> {
        s.0
    }
}

impl fmt::Debug for StateVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("StateVec").field(&self.0).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(StateVec::new(vec![]).is_err());
        assert!(StateVec::new(vec![0.1, f64::NAN]).is_err());
        assert!(StateVec::new(vec![f64::INFINITY]).is_err());
        assert_eq!(StateVec::new(vec![0.25, 0.5]).unwrap().dim(), 2);
    }
}
