//! Streaming estimator: one Bellman update per incoming step over the
//! sliding window `[⌈βt⌉, t)`.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{Neighbor, NeighborIndex, Window};
use crate::mdp::{StateVec, StepRecord, Trajectory};
use crate::norm::Norm;
use crate::offline::{mean_of, parse_field, radius_scale, QEstimate, RadiusConstants};

/// `β = γ^{(d+2)/(d+3)}`.
pub fn schedule_beta(gamma: f64, dim: usize) -> f64 {
    let d = dim as f64;
    gamma.powf((d + 2.0) / (d + 3.0))
}

/// `k(t) = ⌈((1-β)t)^{2/(d+2)}⌉`, at least 1.
pub fn schedule_k_online(t: usize, beta: f64, dim: usize) -> usize {
    let x = (1.0 - beta) * t as f64;
    let k = x.powf(2.0 / (dim as f64 + 2.0)).ceil();
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

/// Horizon `max{3m/(1-β), (ln²T + 1)^{(d+2)/2}}` before which the online
/// error guarantees do not apply. Reported only; updates ignore it.
pub fn warmup_threshold(steps: usize, beta: f64, mixing: usize, dim: usize) -> f64 {
    let ln = (steps as f64).ln();
    let a = 3.0 * mixing as f64 / (1.0 - beta);
    let b = (ln * ln + 1.0).powf((dim as f64 + 2.0) / 2.0);
    a.max(b)
}

/// First admissible step at time `t`: `⌈βt⌉`.
pub fn window_start(t: usize, beta: f64) -> usize {
    ((beta * t as f64).ceil() as usize).clamp(1, t.max(1))
}

/// Neighbour count as a function of time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "k")]
pub enum KSchedule {
    /// `⌈((1-β)t)^{2/(d+2)}⌉`.
    Theory,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineParams {
    pub gamma: f64,
    pub beta: f64,
    pub k_schedule: KSchedule,
    pub dim: usize,
    #[serde(default)]
    pub norm: Norm,
}

impl OnlineParams {
    /// Default schedules for `γ` and dimension `d`.
    pub fn new(gamma: f64, dim: usize) -> Self {
        OnlineParams {
            gamma,
            beta: schedule_beta(gamma, dim),
            k_schedule: KSchedule::Theory,
            dim,
            norm: Norm::Euclidean,
        }
    }

    pub fn k_at(&self, t: usize) -> usize {
        match self.k_schedule {
            KSchedule::Theory => schedule_k_online(t, self.beta, self.dim),
            KSchedule::Fixed(k) => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if self.k_schedule == KSchedule::Fixed(0) {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(())
    }

    /// Radius scale `r_t` for the diagnostics, using `(1-β)t` as the
    /// effective sample count.
    pub fn radius_scale(&self, t: usize, constants: &RadiusConstants) -> f64 {
        radius_scale(self.k_at(t), (1.0 - self.beta) * t as f64, self.dim, constants)
    }
}

/// Counters of degraded updates and queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineDiagnostics {
    /// `(step, action)` pairs whose window held fewer than `k(t)` points.
    pub truncated: usize,
    /// `(step, action)` pairs with no point at all, which used `q = 0`.
    pub empty: usize,
}

/// What a single update looked at.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub value: f64,
    pub k: usize,
    pub window: Window,
    /// Neighbour step indices per action.
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct Live {
    t: usize,
    action: usize,
    state: StateVec,
}

/// Single-pass learner holding `Q(1..=t_now)` and the current window.
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    params: OnlineParams,
    num_actions: usize,
    q: Vec<f64>,
    index: NeighborIndex,
    live: VecDeque<Live>,
    diagnostics: OnlineDiagnostics,
    buf: Vec<Neighbor>,
}

/// Metadata written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub t_now: usize,
    pub num_actions: usize,
    pub params: OnlineParams,
    pub diagnostics: OnlineDiagnostics,
}

impl OnlineLearner {
    pub fn new(params: OnlineParams, num_actions: usize) -> Result<Self> {
        params.validate()?;
        Ok(OnlineLearner {
            index: NeighborIndex::new(params.dim, num_actions, params.norm)?,
            params,
            num_actions,
            q: Vec::new(),
            live: VecDeque::new(),
            diagnostics: OnlineDiagnostics::default(),
            buf: Vec::new(),
        })
    }

    pub fn params(&self) -> &OnlineParams {
        &self.params
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of steps processed.
    pub fn t_now(&self) -> usize {
        self.q.len()
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    pub fn diagnostics(&self) -> OnlineDiagnostics {
        self.diagnostics
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    /// Processes `(S_t, A_t, R_t)` with `S_{t+1} = next` and returns `Q(t)`.
    pub fn step(&mut self, record: &StepRecord, next: &StateVec) -> Result<f64> {
        self.step_inner(record, next, None)
    }

    /// Like [`step`](Self::step) but also reports the neighbours used.
    pub fn step_traced(&mut self, record: &StepRecord, next: &StateVec) -> Result<StepTrace> {
        let mut neighbors = vec![Vec::new(); self.num_actions];
        let value = self.step_inner(record, next, Some(&mut neighbors))?;
        let t = record.t;
        Ok(StepTrace {
            t,
            value,
            k: self.params.k_at(t),
            window: Window { lo: window_start(t, self.params.beta), hi: t },
            neighbors,
        })
    }

    fn step_inner(
        &mut self,
        record: &StepRecord,
        next: &StateVec,
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<f64> {
        let t = self.q.len() + 1;
        if record.t != t {
            return Err(Error::invalid(format!("expected step {t}, got {}", record.t)));
        }
        record.state.check_dim(self.params.dim)?;
        next.check_dim(self.params.dim)?;
        if record.action >= self.num_actions {
            return Err(Error::invalid(format!("action {} out of range", record.action)));
        }
        if !record.reward.is_finite() {
            return Err(Error::invalid(format!("reward at step {t} is not finite")));
        }
        let lo = window_start(t, self.params.beta);
        self.evict(lo)?;
        let k = self.params.k_at(t);
        let window = Window { lo, hi: t };
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.num_actions {
            self.index.knn_into(next, a, k, window, &mut self.buf);
            let (mean, n) = mean_of(&self.q, self.buf.iter().map(|n| n.t));
            if n < k {
                self.diagnostics.truncated += 1;
            }
            if n == 0 {
                self.diagnostics.empty += 1;
            }
            if let Some(trace) = trace.as_deref_mut() {
                trace[a] = self.buf.iter().map(|n| n.t).collect();
            }
            best = best.max(mean);
        }
        let value = record.reward + self.params.gamma * best;
        self.q.push(value);
        self.index.insert(t, &record.state, record.action)?;
        self.live.push_back(Live { t, action: record.action, state: record.state.clone() });
        Ok(value)
    }

    fn evict(&mut self, cutoff: usize) -> Result<()> {
        if cutoff > self.index.watermark() {
            self.index.evict_before(cutoff)?;
            while self.live.front().is_some_and(|l| l.t < cutoff) {
                self.live.pop_front();
            }
        }
        Ok(())
    }

    /// `q_t(s, a)` at `t = t_now`: mean of `Q` over the `k(t_now)` nearest
    /// points with action `a` among steps `⌈β·t_now⌉..=t_now`.
    ///
    /// An action without samples in the window yields the fallback 0,
    /// flagged by [`QEstimate::is_fallback`].
    pub fn query(&self, s: &StateVec, a: usize) -> Result<QEstimate> {
        let t = self.t_now();
        if t == 0 {
            return Err(Error::invalid("no step has been processed yet"));
        }
        if a >= self.num_actions {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        s.check_dim(self.params.dim)?;
        let k = self.params.k_at(t);
        let window = Window { lo: window_start(t, self.params.beta), hi: t + 1 };
        let mut buf = Vec::with_capacity(k);
        self.index.knn_into(s, a, k, window, &mut buf);
        let (value, count) = mean_of(&self.q, buf.iter().map(|n| n.t));
        Ok(QEstimate { value, count, truncated: count < k })
    }

    /// `max_a q_t(s, a)`.
    pub fn value(&self, s: &StateVec) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.num_actions {
            best = best.max(self.query(s, a)?.value);
        }
        Ok(best)
    }

    /// Feeds every step of `traj`.
    pub fn run(&mut self, traj: &Trajectory) -> Result<()> {
        for t in 1..=traj.len() {
            self.step(traj.step(t), traj.next_state(t))?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> CheckpointSidecar {
        CheckpointSidecar {
            t_now: self.t_now(),
            num_actions: self.num_actions,
            params: self.params,
            diagnostics: self.diagnostics,
        }
    }

    /// Writes `t,Q,a,s0..` for every processed step. Action and state are
    /// filled only for steps still inside the window.
    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "Q".to_string(), "a".to_string()];
        header.extend((0..self.params.dim).map(|i| format!("s{i}")));
        out.write_record(&header)?;
        let first_live = self.live.front().map_or(usize::MAX, |l| l.t);
        let mut live = self.live.iter().peekable();
        for (i, q) in self.q.iter().enumerate() {
            let t = i + 1;
            let mut row = vec![t.to_string(), q.to_string()];
            match live.peek() {
                Some(l) if t >= first_live && l.t == t => {
                    row.push(l.action.to_string());
                    row.extend(l.state.iter().map(|x| x.to_string()));
                    live.next();
                }
                _ => row.extend(std::iter::repeat_n(String::new(), self.params.dim + 1)),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.sidecar())?;
        Ok(())
    }

    /// Restores a learner from a checkpoint so the stream can continue at
    /// step `t_now + 1`.
    pub fn resume<R1: Read, R2: Read>(checkpoint: R1, sidecar: R2) -> Result<Self> {
        let meta: CheckpointSidecar = serde_json::from_reader(sidecar)?;
        let mut learner = OnlineLearner::new(meta.params, meta.num_actions)?;
        let dim = meta.params.dim;
        let mut reader = csv::Reader::from_reader(checkpoint);
        let mut entries = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            if row.len() != dim + 3 {
                return Err(Error::invalid(format!("checkpoint row {} has {} columns", i + 1, row.len())));
            }
            let t: usize = parse_field(&row, 0)?;
            if t != i + 1 {
                return Err(Error::invalid(format!("expected step {} in checkpoint, found {t}", i + 1)));
            }
            learner.q.push(parse_field(&row, 1)?);
            if !row[2].trim().is_empty() {
                let action: usize = parse_field(&row, 2)?;
                let coords = (0..dim).map(|j| parse_field(&row, 3 + j)).collect::<Result<Vec<f64>>>()?;
                entries.push(Live { t, action, state: StateVec::new(coords)? });
            }
        }
        if learner.q.len() != meta.t_now {
            return Err(Error::invalid("checkpoint length does not match its sidecar"));
        }
        let cutoff = window_start(meta.t_now, meta.params.beta);
        if entries.iter().any(|l| l.t < cutoff || l.action >= meta.num_actions) {
            return Err(Error::invalid("checkpoint window contains invalid rows"));
        }
        learner.index = NeighborIndex::build(
            dim,
            meta.num_actions,
            meta.params.norm,
            entries.iter().map(|l| (l.t, l.state.clone(), l.action)),
        )?;
        if meta.t_now > 0 {
            learner.index.evict_before(cutoff)?;
        }
        learner.live = entries.into();
        learner.diagnostics = meta.diagnostics;
        Ok(learner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, BoxEnv, ConstantEnv, Environment, Policy};
    use crate::seeded_rng;

    fn constant_traj(steps: usize, seed: u64) -> Trajectory {
        let env = ConstantEnv::new(1, vec![1.0, 1.0], 0.0).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = seeded_rng(seed, 0);
        sample_trajectory(&env, &policy, steps, StateVec::new(vec![0.5]).unwrap(), &mut rng).unwrap()
    }

    fn box_traj(steps: usize, seed: u64, clip: Option<f64>) -> Trajectory {
        let mut env = BoxEnv::new(1, 0.2).unwrap();
        if let Some(c) = clip {
            env = env.with_noise_clip(c);
        }
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = seeded_rng(seed, 0);
        sample_trajectory(&env, &policy, steps, env.initial_state(), &mut rng).unwrap()
    }

    #[test]
    fn schedules() {
        assert!((schedule_beta(0.9, 1) - 0.924_02).abs() < 1e-5);
        assert!((schedule_beta(0.5, 1) - 0.594_60).abs() < 1e-5);
        assert!(schedule_beta(0.999, 2) > schedule_beta(0.99, 2));
        assert_eq!(schedule_k_online(1000, 0.5, 2), 23);
        assert_eq!(schedule_k_online(1, 0.3, 1), 1);
        let mut prev = 1;
        for t in 1..=100_000 {
            let k = schedule_k_online(t, 0.7, 1);
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn warmup() {
        let e = std::f64::consts::E;
        let t = e.round() as usize;
        assert_eq!(warmup_threshold(t, 0.5, 1, 1), 6.0);
        let big = warmup_threshold(1_000_000, 0.9, 1, 1);
        assert!((big / 2656.0 - 1.0).abs() < 1e-3, "{big}");
        assert!(warmup_threshold(1000, 0.9, 2, 1) >= warmup_threshold(1000, 0.5, 2, 1));
    }

    #[test]
    fn first_step_uses_reward() {
        let traj = constant_traj(5, 1);
        let mut learner = OnlineLearner::new(OnlineParams::new(0.5, 1), 2).unwrap();
        let q1 = learner.step(traj.step(1), traj.next_state(1)).unwrap();
        assert_eq!(q1, 1.0);
        let a = traj.step(1).action;
        let est = learner.query(&StateVec::new(vec![9.0]).unwrap(), a).unwrap();
        assert_eq!(est.value, q1);
        let other = learner.query(&StateVec::new(vec![9.0]).unwrap(), 1 - a).unwrap();
        assert!(other.is_fallback());
    }

    #[test]
    fn out_of_order_rejected() {
        let traj = constant_traj(5, 1);
        let mut learner = OnlineLearner::new(OnlineParams::new(0.5, 1), 2).unwrap();
        assert!(learner.step(traj.step(2), traj.next_state(2)).is_err());
        learner.step(traj.step(1), traj.next_state(1)).unwrap();
        assert!(learner.step(traj.step(1), traj.next_state(1)).is_err());
    }

    // brute-force replay of the update rule without the index
    fn reference_q(traj: &Trajectory, params: &OnlineParams) -> Vec<f64> {
        let mut q: Vec<f64> = Vec::new();
        for t in 1..=traj.len() {
            let lo = window_start(t, params.beta);
            let k = params.k_at(t);
            let s = traj.next_state(t);
            let mut best = f64::NEG_INFINITY;
            for a in 0..traj.num_actions() {
                let mut cands: Vec<(f64, usize)> = (lo..t)
                    .filter(|&j| traj.step(j).action == a)
                    .map(|j| ((traj.step(j).state[0] - s[0]).abs(), j))
                    .collect();
                cands.sort_by(|x, y| x.partial_cmp(y).unwrap());
                cands.truncate(k);
                let mean = if cands.is_empty() {
                    0.0
                } else {
                    cands.iter().map(|&(_, j)| q[j - 1]).sum::<f64>() / cands.len() as f64
                };
                best = best.max(mean);
            }
            q.push(traj.step(t).reward + params.gamma * best);
        }
        q
    }

    #[test]
    fn constant_stream_matches_scalar_recursion() {
        let traj = constant_traj(1000, 4);
        let params = OnlineParams::new(0.5, 1);
        let mut learner = OnlineLearner::new(params, 2).unwrap();
        learner.run(&traj).unwrap();
        let want = reference_q(&traj, &params);
        for (got, want) in learner.q_values().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(learner.q_values().windows(2).all(|w| w[1] >= w[0] - 1e-15));
        for a in 0..2 {
            let est = learner.query(&StateVec::new(vec![0.5]).unwrap(), a).unwrap();
            assert!((est.value - 2.0).abs() < 1e-2, "{}", est.value);
        }
    }

    #[test]
    fn box_stream_matches_reference() {
        let traj = box_traj(600, 3, None);
        let params = OnlineParams::new(0.8, 1);
        let mut learner = OnlineLearner::new(params, 2).unwrap();
        learner.run(&traj).unwrap();
        let want = reference_q(&traj, &params);
        for (got, want) in learner.q_values().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn window_bounds_hold() {
        let traj = box_traj(10_000, 7, None);
        let params = OnlineParams::new(0.9, 1);
        let mut learner = OnlineLearner::new(params, 2).unwrap();
        for t in 1..=traj.len() {
            let trace = learner.step_traced(traj.step(t), traj.next_state(t)).unwrap();
            let lo = (params.beta * t as f64).ceil() as usize;
            assert_eq!(learner.index().watermark(), lo.max(1));
            for list in &trace.neighbors {
                assert!(list.len() <= trace.k);
                assert!(list.iter().all(|&j| j >= lo && j < t));
            }
        }
    }

    #[test]
    fn bounded_iterates_with_clipped_noise() {
        let steps = 5000;
        let clip = 0.2 * (steps as f64).ln();
        let traj = box_traj(steps, 12, Some(clip));
        let gamma = 0.8;
        let mut learner = OnlineLearner::new(OnlineParams::new(gamma, 1), 2).unwrap();
        learner.run(&traj).unwrap();
        let r = BoxEnv::new(1, 0.2).unwrap().constants(Norm::Euclidean).reward_bound;
        let bound = (r + clip) / (1.0 - gamma);
        assert!(learner.q_values().iter().all(|q| q.is_finite() && *q <= bound));
    }

    #[test]
    fn checkpoint_resume_continues_identically() {
        let traj = box_traj(800, 21, None);
        let params = OnlineParams::new(0.8, 1);
        let mut full = OnlineLearner::new(params, 2).unwrap();
        full.run(&traj).unwrap();

        let mut part = OnlineLearner::new(params, 2).unwrap();
        for t in 1..=300 {
            part.step(traj.step(t), traj.next_state(t)).unwrap();
        }
        let mut csv_buf = Vec::new();
        let mut json_buf = Vec::new();
        part.write_checkpoint(&mut csv_buf).unwrap();
        part.write_sidecar(&mut json_buf).unwrap();
        let mut resumed = OnlineLearner::resume(&csv_buf[..], &json_buf[..]).unwrap();
        for t in 301..=800 {
            resumed.step(traj.step(t), traj.next_state(t)).unwrap();
        }
        assert_eq!(resumed.q_values(), full.q_values());
        assert_eq!(resumed.diagnostics(), full.diagnostics());
    }

    #[test]
    fn replay_is_deterministic() {
        let traj = box_traj(500, 2, None);
        let params = OnlineParams::new(0.9, 1);
        let mut a = OnlineLearner::new(params, 2).unwrap();
        let mut b = OnlineLearner::new(params, 2).unwrap();
        a.run(&traj).unwrap();
        b.run(&traj).unwrap();
        assert_eq!(a.q_values(), b.q_values());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = OnlineParams::new(0.5, 1);
        p.beta = 1.0;
        assert!(OnlineLearner::new(p, 2).is_err());
        assert!(OnlineLearner::new(OnlineParams::new(1.2, 1), 2).is_err());
        let learner = OnlineLearner::new(OnlineParams::new(0.5, 1), 2).unwrap();
        assert!(learner.query(&StateVec::new(vec![0.0]).unwrap(), 0).is_err());
    }
}
