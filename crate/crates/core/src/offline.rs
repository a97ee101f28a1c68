//! Offline estimator: iterate the kNN Bellman operator over a complete
//! trajectory until the step values stop changing.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::knn::{NeighborIndex, NeighborPlan, Window};
use crate::mdp::{StateVec, Trajectory};
use crate::norm::Norm;

/// `k = ⌈T^{2/(d+2)}⌉`, clamped to `[1, T]`.
pub fn choose_k_offline(steps: usize, dim: usize) -> usize {
    let steps = steps.max(1);
    let k = (steps as f64).powf(2.0 / (dim as f64 + 2.0)).ceil() as usize;
    // guard against powf landing a hair above an exact integer
    let k = if k > 1 && ((k - 1) as f64).powf((dim as f64 + 2.0) / 2.0) >= steps as f64 { k - 1 } else { k };
    k.clamp(1, steps)
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma_fn(h + 1.0)
}

/// Constants entering the high-probability neighbour radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusConstants {
    /// Mixing horizon `m`.
    pub mixing: usize,
    /// Policy floor `π₀`.
    pub policy_floor: f64,
    /// Lower bound `c` on the `m`-step transition density.
    pub density_floor: f64,
    /// Fraction `α` of a small ball guaranteed to lie in the support.
    pub volume_ratio: f64,
}

/// `(3km / (π₀ c α v_d n))^{1/d}` where `n` is the effective sample count
/// (`T` offline, `(1-β)t` online). Twice this value bounds every kNN radius
/// with high probability.
pub fn radius_scale(k: usize, effective_steps: f64, dim: usize, c: &RadiusConstants) -> f64 {
    let denom = c.policy_floor * c.density_floor * c.volume_ratio * unit_ball_volume(dim) * effective_steps;
    (3.0 * k as f64 * c.mixing as f64 / denom).powf(1.0 / dim as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineParams {
    pub k: usize,
    pub gamma: f64,
    pub max_sweeps: usize,
    /// Sup-norm change at which sweeps stop.
    pub fix_tol: f64,
    #[serde(default)]
    pub norm: Norm,
}

impl OfflineParams {
    pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

    /// Parameters with tolerance `1e-8·R/(1-γ)`.
    pub fn new(k: usize, gamma: f64, reward_bound: f64) -> Self {
        OfflineParams {
            k,
            gamma,
            max_sweeps: Self::DEFAULT_MAX_SWEEPS,
            fix_tol: 1e-8 * reward_bound / (1.0 - gamma),
            norm: Norm::Euclidean,
        }
    }

    /// Default schedule `k = ⌈T^{2/(d+2)}⌉` for a trajectory.
    pub fn for_trajectory(traj: &Trajectory, gamma: f64, reward_bound: f64) -> Self {
        OfflineParams::new(choose_k_offline(traj.len(), traj.dim()), gamma, reward_bound)
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if steps < self.k {
            return Err(Error::invalid(format!("trajectory length {steps} is smaller than k = {}", self.k)));
        }
        if !(self.fix_tol > 0.0) || !self.fix_tol.is_finite() {
            return Err(Error::invalid("fix_tol must be a positive number"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be >= 1"));
        }
        Ok(())
    }
}

/// The kNN Bellman operator of a fixed trajectory.
///
/// Neighbour sets of every `S_{t+1}` are computed once; each application
/// then only averages step values.
#[derive(Debug, Clone)]
pub struct BellmanOperator {
    plan: NeighborPlan,
    rewards: Vec<f64>,
    gamma: f64,
    scratch_len: usize,
}

impl BellmanOperator {
    pub fn new(traj: &Trajectory, index: &NeighborIndex, k: usize, gamma: f64) -> Result<Self> {
        if index.dim() != traj.dim() || index.num_actions() != traj.num_actions() {
            return Err(Error::invalid("index does not match the trajectory"));
        }
        let queries: Vec<&[f64]> = (1..=traj.len()).map(|t| traj.next_state(t).as_slice()).collect();
        let plan = index.neighbor_plan(&queries, k)?;
        Ok(BellmanOperator {
            scratch_len: queries.len() * index.num_actions(),
            plan,
            rewards: traj.rewards().collect(),
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// `(t, action)` pairs whose action never occurs in the trajectory and
    /// therefore fall back to `q = 0`.
    pub fn empty_pairs(&self) -> usize {
        self.plan.empty_pairs()
    }

    pub fn plan(&self) -> &NeighborPlan {
        &self.plan
    }

    /// `out(t) = R_t + γ·max_a mean_{j∈N(S_{t+1},a)} q_prev(j)`, reading only
    /// from `q_prev`.
    pub fn apply_into(&self, q_prev: &[f64], out: &mut [f64]) {
        assert_eq!(q_prev.len(), self.rewards.len());
        assert_eq!(out.len(), self.rewards.len());
        let mut means = vec![0.0; self.scratch_len];
        self.plan.means(q_prev, &mut means);
        let na = self.plan.num_actions();
        for (t, slot) in out.iter_mut().enumerate() {
            let best = means[t * na..(t + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *slot = self.rewards[t] + self.gamma * best;
        }
    }

    pub fn apply(&self, q_prev: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; q_prev.len()];
        self.apply_into(q_prev, &mut out);
        out
    }
}

/// One application of the kNN Bellman operator to `q_prev`.
///
/// Builds the neighbour sets from `index` on every call; use
/// [`BellmanOperator`] to apply the operator repeatedly.
pub fn apply_bellman_operator(
    q_prev: &[f64],
    traj: &Trajectory,
    index: &NeighborIndex,
    params: &OfflineParams,
) -> Result<Vec<f64>> {
    if q_prev.len() != traj.len() {
        return Err(Error::invalid(format!("Q has length {}, trajectory has {} steps", q_prev.len(), traj.len())));
    }
    let op = BellmanOperator::new(traj, index, params.k, params.gamma)?;
    Ok(op.apply(q_prev))
}

/// Estimate returned by a kNN evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEstimate {
    pub value: f64,
    /// Neighbours averaged; 0 means the action was never observed and the
    /// value is the fallback 0.
    pub count: usize,
    pub truncated: bool,
}

impl QEstimate {
    pub fn is_fallback(&self) -> bool {
        self.count == 0
    }
}

/// Mean of `values[t - 1]` over `steps`, accumulated with compensation.
pub(crate) fn mean_of(values: &[f64], steps: impl Iterator<Item = usize>) -> (f64, usize) {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for t in steps {
        let v = values[t - 1];
        let s = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
        sum = s;
        n += 1;
    }
    if n == 0 {
        (0.0, 0)
    } else {
        ((sum + comp) / n as f64, n)
    }
}

/// kNN average of step values over `window`, with the 0 fallback for an
/// action without samples.
pub(crate) fn knn_estimate(
    index: &NeighborIndex,
    values: &[f64],
    s: &StateVec,
    a: usize,
    k: usize,
    window: Window,
) -> Result<QEstimate> {
    match index.query_knn(s, a, k, window) {
        Ok(res) => {
            let (value, count) = mean_of(values, res.neighbors.iter().map(|n| n.t));
            Ok(QEstimate { value, count, truncated: res.truncated })
        }
        Err(Error::EmptyNeighborhood { .. }) => Ok(QEstimate { value: 0.0, count: 0, truncated: true }),
        Err(e) => Err(e),
    }
}

/// Result of [`fit_offline`]: converged step values plus the index needed
/// to evaluate `q(s, a)` anywhere.
#[derive(Debug, Clone)]
pub struct OfflineModel {
    q: Vec<f64>,
    index: NeighborIndex,
    params: OfflineParams,
    sweeps_run: usize,
    final_gap: f64,
    empty_pairs: usize,
}

/// Metadata written next to an exported model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSidecar {
    pub steps: usize,
    pub dim: usize,
    pub num_actions: usize,
    pub k: usize,
    pub gamma: f64,
    pub max_sweeps: usize,
    pub fix_tol: f64,
    pub norm: Norm,
    pub sweeps_run: usize,
    pub final_gap: f64,
    pub converged: bool,
}

impl OfflineModel {
    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    pub fn params(&self) -> &OfflineParams {
        &self.params
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn sweeps_run(&self) -> usize {
        self.sweeps_run
    }

    /// Sup-norm change of the last sweep.
    pub fn final_gap(&self) -> f64 {
        self.final_gap
    }

    pub fn converged(&self) -> bool {
        self.final_gap <= self.params.fix_tol
    }

    /// `(t, action)` pairs that used the empty-action fallback in a sweep.
    pub fn empty_pairs(&self) -> usize {
        self.empty_pairs
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `q(s, a)`: mean of `Q` over the `k` nearest steps with action `a`.
    pub fn evaluate(&self, s: &StateVec, a: usize) -> Result<QEstimate> {
        knn_estimate(&self.index, &self.q, s, a, self.params.k, Window::ALL)
    }

    /// `max_a q(s, a)`.
    pub fn value(&self, s: &StateVec) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.index.num_actions() {
            best = best.max(self.evaluate(s, a)?.value);
        }
        Ok(best)
    }

    pub fn sidecar(&self) -> OfflineSidecar {
        OfflineSidecar {
            steps: self.q.len(),
            dim: self.index.dim(),
            num_actions: self.index.num_actions(),
            k: self.params.k,
            gamma: self.params.gamma,
            max_sweeps: self.params.max_sweeps,
            fix_tol: self.params.fix_tol,
            norm: self.params.norm,
            sweeps_run: self.sweeps_run,
            final_gap: self.final_gap,
            converged: self.converged(),
        }
    }

    /// Writes the step values as CSV `t,Q`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "Q"])?;
        for (i, q) in self.q.iter().enumerate() {
            out.write_record([(i + 1).to_string(), q.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.sidecar())?;
        Ok(())
    }

    /// Rebuilds a model from its exported files and the trajectory it was
    /// fitted on.
    pub fn load<R1: Read, R2: Read>(values: R1, sidecar: R2, traj: &Trajectory) -> Result<Self> {
        let meta: OfflineSidecar = serde_json::from_reader(sidecar)?;
        if meta.steps != traj.len() || meta.dim != traj.dim() {
            return Err(Error::invalid("model does not match the trajectory"));
        }
        let mut reader = csv::Reader::from_reader(values);
        let mut q = Vec::with_capacity(meta.steps);
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let t: usize = parse_field(&row, 0)?;
            if t != i + 1 {
                return Err(Error::invalid(format!("expected step {} in model file, found {t}", i + 1)));
            }
            q.push(parse_field::<f64>(&row, 1)?);
        }
        if q.len() != meta.steps {
            return Err(Error::invalid(format!("model file has {} rows, expected {}", q.len(), meta.steps)));
        }
        let params = OfflineParams {
            k: meta.k,
            gamma: meta.gamma,
            max_sweeps: meta.max_sweeps,
            fix_tol: meta.fix_tol,
            norm: meta.norm,
        };
        let index = NeighborIndex::from_trajectory(traj, params.norm)?;
        Ok(OfflineModel { q, index, params, sweeps_run: meta.sweeps_run, final_gap: meta.final_gap, empty_pairs: 0 })
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
    let field = row.get(i).ok_or_else(|| Error::invalid(format!("missing column {i}")))?;
    field.trim().parse().map_err(|_| Error::invalid(format!("cannot parse {field:?} in column {i}")))
}

/// Runs sweeps from `Q ≡ 0` until the sup-norm change drops to
/// `params.fix_tol` or `params.max_sweeps` is reached.
///
/// Hitting the sweep limit is not an error; check
/// [`OfflineModel::converged`].
pub fn fit_offline(traj: &Trajectory, params: &OfflineParams) -> Result<OfflineModel> {
    params.validate(traj.len())?;
    let index = NeighborIndex::from_trajectory(traj, params.norm)?;
    let op = BellmanOperator::new(traj, &index, params.k, params.gamma)?;
    let mut q = vec![0.0; traj.len()];
    let mut next = vec![0.0; traj.len()];
    let mut sweeps_run = 0;
    let mut final_gap = f64::INFINITY;
    while sweeps_run < params.max_sweeps {
        op.apply_into(&q, &mut next);
        final_gap = sup_diff(&q, &next);
        std::mem::swap(&mut q, &mut next);
        sweeps_run += 1;
        if final_gap <= params.fix_tol {
            break;
        }
    }
    Ok(OfflineModel { q, index, params: *params, sweeps_run, final_gap, empty_pairs: op.empty_pairs() })
}

/// `q(s, a)` of a fitted model.
pub fn evaluate_q(model: &OfflineModel, s: &StateVec, a: usize) -> Result<QEstimate> {
    model.evaluate(s, a)
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, BoxEnv, ConstantEnv, Environment, Policy};
    use crate::seeded_rng;
    use rand::Rng;

    fn box_traj(steps: usize, seed: u64) -> Trajectory {
        let env = BoxEnv::new(1, 0.1).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = seeded_rng(seed, 0);
        sample_trajectory(&env, &policy, steps, env.initial_state(), &mut rng).unwrap()
    }

    fn constant_traj(steps: usize) -> Trajectory {
        let env = ConstantEnv::new(1, vec![1.0, 1.0], 0.0).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = seeded_rng(3, 0);
        sample_trajectory(&env, &policy, steps, StateVec::new(vec![0.3]).unwrap(), &mut rng).unwrap()
    }

    #[test]
    fn k_schedule() {
        assert_eq!(choose_k_offline(4096, 2), 64);
        assert_eq!(choose_k_offline(1, 3), 1);
        assert_eq!(choose_k_offline(1000, 1), 100);
        assert_eq!(choose_k_offline(8, 1), 4);
        for t in 1..2000 {
            let k = choose_k_offline(t, 1);
            assert!(k >= 1 && k <= t);
            assert!((k as f64).powf(1.5) >= t as f64 - 1e-9);
            assert!(((k - 1) as f64).powf(1.5) < t as f64);
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-12);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn first_sweep_returns_rewards() {
        let traj = box_traj(200, 1);
        let index = NeighborIndex::from_trajectory(&traj, Norm::Euclidean).unwrap();
        let params = OfflineParams::new(5, 0.9, 1.0);
        let q = apply_bellman_operator(&vec![0.0; 200], &traj, &index, &params).unwrap();
        let rewards: Vec<f64> = traj.rewards().collect();
        assert_eq!(q, rewards);
    }

    #[test]
    fn constant_env_geometric_iterates() {
        let traj = constant_traj(50);
        let index = NeighborIndex::from_trajectory(&traj, Norm::Euclidean).unwrap();
        let op = BellmanOperator::new(&traj, &index, 3, 0.5).unwrap();
        let mut q = vec![0.0; 50];
        let mut expected = 0.0;
        for _ in 0..30 {
            q = op.apply(&q);
            expected = 1.0 + 0.5 * expected;
            let sup = q.iter().copied().fold(0.0, f64::max);
            assert!((sup - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_env_fixed_point() {
        let traj = constant_traj(200);
        let mut params = OfflineParams::new(10, 0.5, 1.0);
        params.fix_tol = 1e-9;
        let model = fit_offline(&traj, &params).unwrap();
        assert!(model.converged());
        assert!(model.q_values().iter().all(|q| (q - 2.0).abs() <= 1e-9));
        for x in [-3.0, 0.3, 7.5] {
            for a in 0..2 {
                let est = model.evaluate(&StateVec::new(vec![x]).unwrap(), a).unwrap();
                assert!((est.value - 2.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn sweep_count_within_contraction_bound() {
        for gamma in [0.5, 0.9] {
            let traj = box_traj(500, 11);
            let params = OfflineParams::new(choose_k_offline(500, 1), gamma, 1.0);
            let model = fit_offline(&traj, &params).unwrap();
            let qm = 1.0 / (1.0 - gamma);
            let bound = ((qm / params.fix_tol).ln() / (1.0 / gamma).ln()).ceil() as usize + 1;
            assert!(model.converged());
            assert!(model.sweeps_run() <= bound, "{} > {bound}", model.sweeps_run());
        }
    }

    #[test]
    fn fixed_point_residual() {
        let gamma = 0.8;
        let traj = box_traj(400, 5);
        let params = OfflineParams::new(choose_k_offline(400, 1), gamma, 1.0);
        let model = fit_offline(&traj, &params).unwrap();
        let op = BellmanOperator::new(&traj, model.index(), params.k, gamma).unwrap();
        let residual = sup_diff(&op.apply(model.q_values()), model.q_values());
        assert!(residual <= params.fix_tol * (1.0 + gamma) / (1.0 - gamma));
    }

    #[test]
    fn evaluation_reproduces_sweep_values() {
        let gamma = 0.7;
        let traj = box_traj(300, 9);
        let params = OfflineParams::new(choose_k_offline(300, 1), gamma, 1.0);
        let model = fit_offline(&traj, &params).unwrap();
        let op = BellmanOperator::new(&traj, model.index(), params.k, gamma).unwrap();
        let next = op.apply(model.q_values());
        for t in 1..=traj.len() {
            let v = model.value(traj.next_state(t)).unwrap();
            assert!((traj.step(t).reward + gamma * v - next[t - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neighbor_identity() {
        let traj = box_traj(100, 2);
        let mut params = OfflineParams::new(1, 0.5, 1.0);
        params.fix_tol = 1e-6;
        let model = fit_offline(&traj, &params).unwrap();
        for t in [1, 40, 100] {
            let step = traj.step(t);
            let est = model.evaluate(&step.state, step.action).unwrap();
            assert_eq!(est.value, model.q_values()[t - 1]);
        }
    }

    #[test]
    fn deterministic_and_missing_actions() {
        let traj = box_traj(300, 4);
        let params = OfflineParams::new(8, 0.9, 1.0);
        let a = fit_offline(&traj, &params).unwrap();
        let b = fit_offline(&traj, &params).unwrap();
        assert_eq!(a.q_values(), b.q_values());

        let env = ConstantEnv::new(1, vec![1.0, 0.5, 0.2], 0.0).unwrap();
        let policy = Policy::fixed(1, vec![0.5, 0.5 - 1e-12, 1e-12]).unwrap();
        let mut rng = seeded_rng(1, 0);
        let traj = sample_trajectory(&env, &policy, 50, env.initial_state(), &mut rng).unwrap();
        let model = fit_offline(&traj, &OfflineParams::new(3, 0.5, 1.0)).unwrap();
        assert_eq!(model.empty_pairs(), 50);
        let est = model.evaluate(&StateVec::new(vec![0.0]).unwrap(), 2).unwrap();
        assert!(est.is_fallback());
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let traj = box_traj(10, 1);
        assert!(fit_offline(&traj, &OfflineParams::new(11, 0.5, 1.0)).is_err());
        assert!(fit_offline(&traj, &OfflineParams::new(2, 1.0, 1.0)).is_err());
        let mut p = OfflineParams::new(2, 0.5, 1.0);
        p.fix_tol = 0.0;
        assert!(fit_offline(&traj, &p).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let traj = box_traj(200, 1);
        let mut params = OfflineParams::new(5, 0.99, 1.0);
        params.max_sweeps = 3;
        let model = fit_offline(&traj, &params).unwrap();
        assert_eq!(model.sweeps_run(), 3);
        assert!(!model.converged());
    }

    #[test]
    fn contraction_on_random_pairs() {
        let traj = box_traj(200, 8);
        let index = NeighborIndex::from_trajectory(&traj, Norm::Euclidean).unwrap();
        let mut rng = seeded_rng(99, 0);
        for gamma in [0.5, 0.9, 0.99] {
            let op = BellmanOperator::new(&traj, &index, 7, gamma).unwrap();
            for _ in 0..20 {
                let q1: Vec<f64> = (0..200).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let q2: Vec<f64> = (0..200).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let lhs = sup_diff(&op.apply(&q1), &op.apply(&q2));
                assert!(lhs <= gamma * sup_diff(&q1, &q2) + 1e-12);
            }
        }
    }

    #[test]
    fn export_round_trip() {
        let traj = box_traj(120, 6);
        let model = fit_offline(&traj, &OfflineParams::new(6, 0.8, 1.0)).unwrap();
        let mut csv_buf = Vec::new();
        let mut json_buf = Vec::new();
        model.write_csv(&mut csv_buf).unwrap();
        model.write_sidecar(&mut json_buf).unwrap();
        let loaded = OfflineModel::load(&csv_buf[..], &json_buf[..], &traj).unwrap();
        assert_eq!(loaded.q_values(), model.q_values());
        assert_eq!(loaded.sidecar(), model.sidecar());
    }
}
