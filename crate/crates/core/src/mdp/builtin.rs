//! Built-in environments.
//!
//! * [`BoxEnv`]: bounded box `[0,1]^d`, sinusoidal rewards and a separable
//!   truncated-Gaussian kernel pulled towards an action-dependent target.
//! * [`Ar1Env`]: unbounded `S' = ρS + b(a) + N(0, τ²)` per axis.
//! * [`ConstantEnv`]: state-independent rewards with `S' = S`; its fixed
//!   points are known in closed form.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mdp::env::{EnvConstants, Environment, KernelForm, NoiseModel, Support, TruncationBox};
use crate::mdp::StateVec;
use crate::norm::Norm;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn check_common(dim: usize, sigma: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("environment dimension must be >= 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    Ok(())
}

fn sinusoid_reward(s: &[f64], freq: f64, phase: f64) -> f64 {
    let m = s.iter().sum::<f64>() / s.len() as f64;
    0.5 + 0.4 * (freq * m + phase).sin()
}

/// Lipschitz constant of `0.5 + 0.4 sin(freq·mean(s) + φ)` in `norm`.
fn sinusoid_lipschitz(freq: f64, dim: usize, norm: Norm) -> f64 {
    // each partial derivative is bounded by 0.4·freq/d
    0.4 * freq / dim as f64 * norm.l1_equivalence(dim)
}

/// Bounded box environment on `[0,1]^d` with two actions.
///
/// Per axis, `S'_i` is `N(μ, τ²)` truncated to `[0,1]` with
/// `μ = (1-κ)·s_i + κ·target_a`. Rewards are
/// `0.5 + 0.4·sin(2π·mean(s) + a·π/2)`.
#[derive(Debug)]
pub struct BoxEnv {
    dim: usize,
    noise: NoiseModel,
    pull: f64,
    spread: f64,
    targets: [f64; 2],
    bounds_table: OnceLock<Vec<AxisBoundsTable>>,
}

#[derive(Debug)]
struct AxisBoundsTable {
    sup_density_mass: f64,
    sup_slope_mass: f64,
}

const BOX_PULL: f64 = 0.5;
const BOX_SPREAD: f64 = 0.25;
const BOX_TARGETS: [f64; 2] = [0.25, 0.75];
const BOX_PHASES: [f64; 2] = [0.0, PI / 2.0];
// s-grid used to approximate sup_x over [0,1]
const SUP_GRID: usize = 801;
// sup over a finite grid slightly under-reports the true supremum
const SUP_MARGIN: f64 = 1.01;

impl BoxEnv {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        check_common(dim, sigma)?;
        Ok(BoxEnv {
            dim,
            noise: NoiseModel { sigma, clip: None },
            pull: BOX_PULL,
            spread: BOX_SPREAD,
            targets: BOX_TARGETS,
            bounds_table: OnceLock::new(),
        })
    }

    /// Clamp reward noise to `±clip`.
    pub fn with_noise_clip(mut self, clip: f64) -> Self {
        self.noise.clip = Some(clip);
        self
    }

    fn mean_next(&self, x: f64, a: usize) -> f64 {
        (1.0 - self.pull) * x + self.pull * self.targets[a]
    }

    fn mass(&self, mu: f64) -> f64 {
        std_cdf((1.0 - mu) / self.spread) - std_cdf(-mu / self.spread)
    }

    /// `∂p₁(y|x,a)/∂x`.
    fn axis_slope(&self, y: f64, x: f64, a: usize) -> f64 {
        let mu = self.mean_next(x, a);
        let tau = self.spread;
        let z = (y - mu) / tau;
        let mass = self.mass(mu);
        let p = std_pdf(z) / (tau * mass);
        let dmass = (std_pdf(-mu / tau) - std_pdf((1.0 - mu) / tau)) / tau;
        (1.0 - self.pull) * p * (z / tau - dmass / mass)
    }

    fn tables(&self) -> &[AxisBoundsTable] {
        self.bounds_table.get_or_init(|| {
            (0..2)
                .map(|a| {
                    let n = SUP_GRID;
                    let h = 1.0 / (n - 1) as f64;
                    let mut dens = Vec::with_capacity(n);
                    let mut slope = Vec::with_capacity(n);
                    for j in 0..n {
                        let (p, l) = self.axis_density_bounds(j as f64 * h, a);
                        dens.push(p);
                        slope.push(l);
                    }
                    AxisBoundsTable { sup_density_mass: trapezoid(&dens, h), sup_slope_mass: trapezoid(&slope, h) }
                })
                .collect()
        })
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

impl Environment for BoxEnv {
    fn name(&self) -> &str {
        "box"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn mean_reward(&self, s: &[f64], a: usize) -> f64 {
        sinusoid_reward(s, TAU, BOX_PHASES[a])
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }

    fn sample_next(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        s.iter()
            .map(|x| {
                let mu = self.mean_next(*x, a);
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let y = mu + self.spread * z;
                    if (0.0..=1.0).contains(&y) {
                        break y;
                    }
                }
            })
            .collect()
    }

    fn support(&self) -> Support {
        Support::Bounded { lo: vec![0.0; self.dim], hi: vec![1.0; self.dim] }
    }

    fn initial_state(&self) -> StateVec {
        StateVec::from_trusted(vec![0.5; self.dim])
    }

    fn constants(&self, norm: Norm) -> EnvConstants {
        // C_p = ∫ L_p(y) dy for the product envelope of kernel_density_lipschitz
        let d = self.dim;
        let c_p = self
            .tables()
            .iter()
            .map(|t| d as f64 * t.sup_slope_mass * t.sup_density_mass.powi(d as i32 - 1))
            .fold(0.0, f64::max)
            * norm.l1_equivalence(d);
        EnvConstants {
            reward_bound: 1.0,
            reward_lipschitz: sinusoid_lipschitz(TAU, d, norm),
            kernel_lipschitz_mass: c_p,
            noise_sigma: self.noise.sigma,
            mixing: 1,
        }
    }

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Separable
    }

    fn axis_density(&self, y: f64, x: f64, a: usize) -> f64 {
        if !(0.0..=1.0).contains(&y) {
            return 0.0;
        }
        let mu = self.mean_next(x, a);
        std_pdf((y - mu) / self.spread) / (self.spread * self.mass(mu))
    }

    fn axis_density_bounds(&self, y: f64, a: usize) -> (f64, f64) {
        if !(0.0..=1.0).contains(&y) {
            return (0.0, 0.0);
        }
        let n = SUP_GRID;
        let mut sup_p = 0.0f64;
        let mut sup_l = 0.0f64;
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            sup_p = sup_p.max(self.axis_density(y, x, a));
            sup_l = sup_l.max(self.axis_slope(y, x, a).abs());
        }
        (sup_p * SUP_MARGIN, sup_l * SUP_MARGIN)
    }
}

/// Unbounded autoregressive environment with two actions.
///
/// Per axis `S'_i = ρ·S_i + b(a) + N(0, τ²)`, rewards
/// `0.5 + 0.4·sin(1.5·mean(s) + a·π/2)`.
///
/// The pointwise envelope `sup_s |∂p(y|s)/∂s|` is a positive constant in `y`
/// and so not integrable over the real line. `C_p` is therefore declared as
/// the total-variation Lipschitz constant `ρ·√(2/π)/τ` per axis, which is
/// what the Lipschitz bound on `Q*` consumes.
#[derive(Debug)]
pub struct Ar1Env {
    dim: usize,
    noise: NoiseModel,
    rho: f64,
    spread: f64,
    drift: [f64; 2],
}

const AR1_RHO: f64 = 0.7;
const AR1_SPREAD: f64 = 0.5;
const AR1_DRIFT: [f64; 2] = [-0.5, 0.5];
const AR1_FREQ: f64 = 1.5;
// z-score of the truncation box: 2·(1 - Φ(5)) ≈ 5.7e-7 per axis
const AR1_BOX_Z: f64 = 5.0;

impl Ar1Env {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        check_common(dim, sigma)?;
        Ok(Ar1Env { dim, noise: NoiseModel { sigma, clip: None }, rho: AR1_RHO, spread: AR1_SPREAD, drift: AR1_DRIFT })
    }

    pub fn with_noise_clip(mut self, clip: f64) -> Self {
        self.noise.clip = Some(clip);
        self
    }

    /// Standard deviation of the Gaussian part of the stationary law.
    pub fn stationary_noise_sd(&self) -> f64 {
        self.spread / (1.0 - self.rho * self.rho).sqrt()
    }
}

impl Environment for Ar1Env {
    fn name(&self) -> &str {
        "ar1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn mean_reward(&self, s: &[f64], a: usize) -> f64 {
        sinusoid_reward(s, AR1_FREQ, BOX_PHASES[a])
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }

    fn sample_next(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        s.iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                self.rho * x + self.drift[a] + self.spread * z
            })
            .collect()
    }

    fn support(&self) -> Support {
        Support::Unbounded
    }

    fn initial_state(&self) -> StateVec {
        StateVec::from_trusted(vec![0.0; self.dim])
    }

    fn constants(&self, norm: Norm) -> EnvConstants {
        let tv_per_axis = self.rho * (2.0 / PI).sqrt() / self.spread;
        EnvConstants {
            reward_bound: 1.0,
            reward_lipschitz: sinusoid_lipschitz(AR1_FREQ, self.dim, norm),
            kernel_lipschitz_mass: tv_per_axis * norm.l1_equivalence(self.dim),
            noise_sigma: self.noise.sigma,
            mixing: 1,
        }
    }

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Separable
    }

    fn axis_density(&self, y: f64, x: f64, a: usize) -> f64 {
        let mu = self.rho * x + self.drift[a];
        std_pdf((y - mu) / self.spread) / self.spread
    }

    fn axis_density_bounds(&self, _y: f64, _a: usize) -> (f64, f64) {
        // |z|·φ(z) peaks at z = 1
        let tau = self.spread;
        (INV_SQRT_2PI / tau, self.rho * std_pdf(1.0) / (tau * tau))
    }

    fn truncation_box(&self) -> Option<TruncationBox> {
        // S = Σ ρ^i (b(A_i) + τ Z_i): the drift part is confined to
        // [b_min, b_max]/(1-ρ); the Gaussian part is exactly N(0, τ²/(1-ρ²)).
        let sd = self.stationary_noise_sd();
        let lo = self.drift[0].min(self.drift[1]) / (1.0 - self.rho) - AR1_BOX_Z * sd;
        let hi = self.drift[0].max(self.drift[1]) / (1.0 - self.rho) + AR1_BOX_Z * sd;
        let per_axis = 2.0 * (1.0 - std_cdf(AR1_BOX_Z));
        Some(TruncationBox { lo: vec![lo; self.dim], hi: vec![hi; self.dim], mass_loss: per_axis * self.dim as f64 })
    }
}

/// State-independent rewards `r(s, a) = rewards[a]` with identity transitions
/// on `[0,1]^d`.
///
/// `Q*(s, a) = rewards[a] + γ·max_b Q*(s, b)` at every state. The kernel is a
/// point mass, so `C_p` is reported as infinite.
#[derive(Debug)]
pub struct ConstantEnv {
    dim: usize,
    rewards: Vec<f64>,
    noise: NoiseModel,
}

impl ConstantEnv {
    pub fn new(dim: usize, rewards: Vec<f64>, sigma: f64) -> Result<Self> {
        check_common(dim, sigma)?;
        if rewards.is_empty() {
            return Err(Error::invalid("constant environment needs at least one action"));
        }
        if rewards.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("constant rewards must be finite and >= 0"));
        }
        Ok(ConstantEnv { dim, rewards, noise: NoiseModel { sigma, clip: None } })
    }
}

impl Environment for ConstantEnv {
    fn name(&self) -> &str {
        "constant"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        self.rewards.len()
    }

    fn mean_reward(&self, _s: &[f64], a: usize) -> f64 {
        self.rewards[a]
    }

    fn noise(&self) -> NoiseModel {
        self.noise
    }

    fn sample_next(&self, s: &[f64], _a: usize, _rng: &mut dyn RngCore) -> Vec<f64> {
        s.to_vec()
    }

    fn support(&self) -> Support {
        Support::Bounded { lo: vec![0.0; self.dim], hi: vec![1.0; self.dim] }
    }

    fn initial_state(&self) -> StateVec {
        StateVec::from_trusted(vec![0.5; self.dim])
    }

    fn constants(&self, _norm: Norm) -> EnvConstants {
        EnvConstants {
            reward_bound: self.rewards.iter().copied().fold(0.0, f64::max),
            reward_lipschitz: 0.0,
            kernel_lipschitz_mass: f64::INFINITY,
            noise_sigma: self.noise.sigma,
            mixing: 1,
        }
    }

    fn kernel_form(&self) -> KernelForm {
        KernelForm::Identity
    }
}
