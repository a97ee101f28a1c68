use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::mdp::StateVec;
use crate::norm::Norm;

/// Where states live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// Axis-aligned box `[lo, hi]`.
    Bounded {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Unbounded,
}

/// How the transition kernel is exposed to the value-iteration oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelForm {
    /// `S' = S` almost surely.
    Identity,
    /// `p(y|s,a) = Π_i p₁(y_i | s_i, a)` with `p₁` given by
    /// [`Environment::axis_density`].
    Separable,
    /// No closed form; oracles are not available.
    Unavailable,
}

/// Reward noise `W ~ N(0, σ²)`, optionally clamped to `[-clip, clip]`.
///
/// Clamping is symmetric, so the clamped noise keeps zero mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub clip: Option<f64>,
}

/// Problem constants an environment declares about itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConstants {
    /// `R`: mean rewards lie in `[0, R]`.
    pub reward_bound: f64,
    /// `L_r` in the configured norm.
    pub reward_lipschitz: f64,
    /// `C_p` in the configured norm; infinite when the kernel has no density.
    pub kernel_lipschitz_mass: f64,
    pub noise_sigma: f64,
    /// Mixing horizon `m`; 1 unless the environment knows better.
    pub mixing: usize,
}

/// Box used by the oracle for an unbounded environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Upper bound on the stationary mass outside the box.
    pub mass_loss: f64,
}

/// A continuous-state MDP with finitely many actions.
///
/// Implementations are immutable after construction and shared across
/// threads.
pub trait Environment: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn num_actions(&self) -> usize;

    /// Mean reward `r(s, a)`.
    fn mean_reward(&self, s: &[f64], a: usize) -> f64;

    fn noise(&self) -> NoiseModel;

    /// Draws `S' ~ p(·|s, a)`.
    fn sample_next(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> Vec<f64>;

    fn support(&self) -> Support;

    fn initial_state(&self) -> StateVec;

    fn constants(&self, norm: Norm) -> EnvConstants;

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Unavailable
    }

    /// One-axis factor `p₁(y | x, a)` of a separable kernel.
    fn axis_density(&self, _y: f64, _x: f64, _a: usize) -> f64 {
        f64::NAN
    }

    /// `(sup_x p₁(y|x,a), sup_x |∂p₁(y|x,a)/∂x|)` for a separable kernel.
    fn axis_density_bounds(&self, _y: f64, _a: usize) -> (f64, f64) {
        (f64::NAN, f64::NAN)
    }

    /// Box for the oracle when the support is unbounded.
    fn truncation_box(&self) -> Option<TruncationBox> {
        None
    }
}

/// Full kernel density `p(y|s,a)` of a separable environment.
pub fn kernel_density(env: &dyn Environment, y: &[f64], s: &[f64], a: usize) -> Option<f64> {
    match env.kernel_form() {
        KernelForm::Separable => Some(y.iter().zip(s).map(|(yi, si)| env.axis_density(*yi, *si, a)).product()),
        _ => None,
    }
}

/// Pointwise Lipschitz envelope `L_p(y)` with
/// `|p(y|s,a) - p(y|s',a)| <= L_p(y)·‖s - s'‖`.
///
/// For a product kernel, changing one coordinate at a time gives
/// `Σ_i L₁(y_i)·Π_{j≠i} P₁(y_j)` in ℓ1, which is then rescaled to `norm`.
pub fn kernel_density_lipschitz(env: &dyn Environment, y: &[f64], a: usize, norm: Norm) -> Option<f64> {
    if env.kernel_form() != KernelForm::Separable {
        return None;
    }
    let bounds: Vec<(f64, f64)> = y.iter().map(|yi| env.axis_density_bounds(*yi, a)).collect();
    let mut total = 0.0;
    for i in 0..bounds.len() {
        let others: f64 = bounds.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.0).product();
        total += bounds[i].1 * others;
    }
    Some(total * norm.l1_equivalence(y.len()))
}
