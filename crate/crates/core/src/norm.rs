use serde::{Deserialize, Serialize};

/// Distance used between states.
///
/// For one-dimensional states every variant reduces to `|x - y|` and is
/// computed that way, so all three norms agree bit for bit in 1-D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclidean,
    /// ℓ∞
    Max,
    /// ℓ1
    Manhattan,
}

impl Norm {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        if a.len() == 1 {
            return (a[0] - b[0]).abs();
        }
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::Max => diffs.fold(0.0, f64::max),
            Norm::Manhattan => diffs.sum(),
        }
    }

    /// Factor `c` with `‖x‖_1 <= c·‖x‖` in dimension `d`.
    ///
    /// Per-axis Lipschitz constants add up in ℓ1; this converts them to the
    /// configured norm.
    pub fn l1_equivalence(self, d: usize) -> f64 {
        match self {
            Norm::Manhattan => 1.0,
            Norm::Euclidean => (d as f64).sqrt(),
            Norm::Max => d as f64,
        }
    }
}
