//! Exact k-nearest-neighbour search over trajectory states, one structure
//! per action, with time windows and prefix eviction.

mod kdtree;
mod line;
mod plan;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::mdp::{StateVec, Trajectory};
use crate::norm::Norm;

use kdtree::KdForest;
use line::{Entry, LineStore};
pub use plan::NeighborPlan;

/// A stored point returned by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub t: usize,
    pub dist: f64,
}

/// Neighbours sorted by `(distance, t)`. `truncated` is set when fewer than
/// `k` candidates were available.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
    pub truncated: bool,
}

impl KnnResult {
    pub fn steps(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.t).collect()
    }

    /// Distance to the farthest returned neighbour.
    pub fn radius(&self) -> f64 {
        self.neighbors.last().map_or(0.0, |n| n.dist)
    }
}

/// Half-open range `[lo, hi)` of admissible step indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub const ALL: Window = Window { lo: 0, hi: usize::MAX };

    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi {
            return Err(Error::invalid(format!("empty window [{lo}, {hi})")));
        }
        Ok(Window { lo, hi })
    }

    pub fn from(lo: usize) -> Self {
        Window { lo, hi: usize::MAX }
    }
}

#[derive(Debug, Clone)]
enum Store {
    Line(LineStore),
    Forest(KdForest),
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    t: usize,
    action: usize,
    x: f64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
    }
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.cmp(&other.t)
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-action spatial index over `(t, S_t)` pairs.
///
/// One-dimensional states live in a chunked sorted list and are removed as
/// soon as they fall below the watermark. Higher dimensions use a kd-tree
/// forest where eviction is applied by the query predicate first and
/// physically later; results are identical either way.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    num_actions: usize,
    norm: Norm,
    watermark: usize,
    stores: Vec<Store>,
    present: HashSet<usize>,
    by_time: BinaryHeap<Reverse<Pending>>,
}

impl NeighborIndex {
    pub fn new(dim: usize, num_actions: usize, norm: Norm) -> Result<Self> {
        if dim == 0 || num_actions == 0 {
            return Err(Error::invalid("index needs dim >= 1 and at least one action"));
        }
        let stores = (0..num_actions)
            .map(|_| if dim == 1 { Store::Line(LineStore::default()) } else { Store::Forest(KdForest::new(dim)) })
            .collect();
        Ok(NeighborIndex {
            dim,
            num_actions,
            norm,
            watermark: 0,
            stores,
            present: HashSet::new(),
            by_time: BinaryHeap::new(),
        })
    }

    /// Static index over `(t, state, action)` entries.
    pub fn build<I>(dim: usize, num_actions: usize, norm: Norm, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, StateVec, usize)>,
    {
        let mut index = NeighborIndex::new(dim, num_actions, norm)?;
        let mut ts: Vec<Vec<usize>> = vec![Vec::new(); num_actions];
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); num_actions];
        let mut pending = Vec::new();
        for (t, s, a) in entries {
            index.validate_point(&s, a)?;
            if !index.present.insert(t) {
                return Err(Error::invalid(format!("duplicate step index {t}")));
            }
            pending.push(Reverse(Pending { t, action: a, x: s[0] }));
            ts[a].push(t);
            coords[a].extend_from_slice(&s);
        }
        index.by_time = BinaryHeap::from(pending);
        for (a, (ts, coords)) in ts.into_iter().zip(coords).enumerate() {
            index.stores[a] = if dim == 1 {
                let entries = ts.into_iter().zip(coords).map(|(t, x)| Entry { x, t }).collect();
                Store::Line(LineStore::from_sorted(entries))
            } else {
                Store::Forest(KdForest::bulk(dim, ts, coords))
            };
        }
        Ok(index)
    }

    /// Index over `(t, S_t, A_t)` for `t = 1..=T`.
    pub fn from_trajectory(traj: &Trajectory, norm: Norm) -> Result<Self> {
        NeighborIndex::build(
            traj.dim(),
            traj.num_actions(),
            norm,
            traj.steps().iter().map(|s| (s.t, s.state.clone(), s.action)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// Smallest admissible step index.
    pub fn watermark(&self) -> usize {
        self.watermark
    }

    /// Number of live points.
    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    fn validate_point(&self, s: &StateVec, a: usize) -> Result<()> {
        s.check_dim(self.dim)?;
        if a >= self.num_actions {
            return Err(Error::invalid(format!("action {a} out of range for {} actions", self.num_actions)));
        }
        Ok(())
    }

    pub fn insert(&mut self, t: usize, s: &StateVec, a: usize) -> Result<()> {
        self.validate_point(s, a)?;
        if t < self.watermark {
            return Err(Error::invalid(format!("step {t} is below the eviction watermark {}", self.watermark)));
        }
        if !self.present.insert(t) {
            return Err(Error::invalid(format!("duplicate step index {t}")));
        }
        self.by_time.push(Reverse(Pending { t, action: a, x: s[0] }));
        match &mut self.stores[a] {
            Store::Line(line) => line.insert(s[0], t),
            Store::Forest(forest) => forest.insert(t, s),
        }
        Ok(())
    }

    /// Permanently removes every point with `t < cutoff`.
    pub fn evict_before(&mut self, cutoff: usize) -> Result<()> {
        if cutoff < self.watermark {
            return Err(Error::invalid(format!(
                "eviction cutoff {cutoff} is below the current watermark {}",
                self.watermark
            )));
        }
        if cutoff == self.watermark {
            return Ok(());
        }
        self.watermark = cutoff;
        let mut touched_forest = false;
        while let Some(Reverse(p)) = self.by_time.peek().copied() {
            if p.t >= cutoff {
                break;
            }
            self.by_time.pop();
            self.present.remove(&p.t);
            match &mut self.stores[p.action] {
                Store::Line(line) => {
                    line.remove(p.x, p.t);
                }
                Store::Forest(_) => touched_forest = true,
            }
        }
        if touched_forest {
            for store in &mut self.stores {
                if let Store::Forest(forest) = store {
                    forest.evict(cutoff);
                }
            }
        }
        Ok(())
    }

    fn check_query(&self, s: &[f64], a: usize, k: usize) -> Result<()> {
        if s.len() != self.dim {
            return Err(Error::invalid(format!("query has dimension {}, expected {}", s.len(), self.dim)));
        }
        if a >= self.num_actions {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(())
    }

    /// Fills `out` with the neighbours without validation or allocation.
    pub(crate) fn knn_into(&self, s: &[f64], a: usize, k: usize, window: Window, out: &mut Vec<Neighbor>) {
        let lo = window.lo.max(self.watermark);
        match &self.stores[a] {
            Store::Line(line) => line.knn_into(s[0], k, lo, window.hi, out),
            Store::Forest(forest) => forest.knn_into(s, k, lo, window.hi, self.norm, out),
        }
    }

    /// The `min(k, available)` points with action `a` and `t` in `window`
    /// closest to `s`, ties broken by smaller step index.
    pub fn query_knn(&self, s: &StateVec, a: usize, k: usize, window: Window) -> Result<KnnResult> {
        self.check_query(s, a, k)?;
        if window.lo >= window.hi {
            return Err(Error::invalid(format!("empty window [{}, {})", window.lo, window.hi)));
        }
        let mut neighbors = Vec::with_capacity(k.min(self.len()));
        self.knn_into(s, a, k, window, &mut neighbors);
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood { action: a, lo: window.lo.max(self.watermark), hi: window.hi });
        }
        let truncated = neighbors.len() < k;
        Ok(KnnResult { neighbors, truncated })
    }

    /// Distance from `s` to its k-th nearest admissible neighbour (or the
    /// farthest one when fewer than `k` exist).
    pub fn knn_radius(&self, s: &StateVec, a: usize, k: usize, window: Window) -> Result<f64> {
        Ok(self.query_knn(s, a, k, window)?.radius())
    }

    /// Precomputes `N(q, a)` for every query point and action over all live
    /// points.
    pub fn neighbor_plan(&self, queries: &[&[f64]], k: usize) -> Result<NeighborPlan> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if let Some(q) = queries.iter().find(|q| q.len() != self.dim) {
            return Err(Error::invalid(format!("query has dimension {}", q.len())));
        }
        Ok(plan::build(self, queries, k))
    }

    fn line_entries(&self, a: usize) -> Option<Vec<Entry>> {
        match &self.stores[a] {
            Store::Line(line) => Some(line.flatten()),
            Store::Forest(_) => None,
        }
    }
}
