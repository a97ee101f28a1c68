//! Precomputed neighbour sets for repeated averaging over a fixed index.

use rayon::prelude::*;

use super::line::knn_runs;
use super::{Neighbor, NeighborIndex, Window};

/// Neighbour sets `N(q, a)` for a fixed list of query points.
///
/// For every action the step indices are laid out in one order; each
/// `(query, action)` pair owns a few spans of that order. Averages over all
/// pairs are then read off prefix sums, so a full pass costs
/// `O(T + queries · spans)` regardless of `k`.
#[derive(Debug, Clone)]
pub struct NeighborPlan {
    num_queries: usize,
    num_actions: usize,
    orders: Vec<Vec<u32>>,
    // spans of pair p are spans[offsets[p]..offsets[p + 1]]
    spans: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    counts: Vec<u32>,
}

pub(super) fn build(index: &NeighborIndex, queries: &[&[f64]], k: usize) -> NeighborPlan {
    let na = index.num_actions();
    let nq = queries.len();
    let mut orders = Vec::with_capacity(na);
    // per action, per query spans
    let mut per_action: Vec<Vec<Vec<(u32, u32)>>> = Vec::with_capacity(na);
    for a in 0..na {
        if let Some(flat) = index.line_entries(a) {
            let order: Vec<u32> = flat.iter().map(|e| e.t as u32).collect();
            let spans: Vec<Vec<(u32, u32)>> = queries
                .par_iter()
                .map_init(Vec::new, |runs, q| {
                    knn_runs(&flat, q[0], k, runs);
                    runs.iter().map(|&(s, e)| (s as u32, e as u32)).collect()
                })
                .collect();
            orders.push(order);
            per_action.push(spans);
        } else {
            let lists: Vec<Vec<Neighbor>> = queries
                .par_iter()
                .map(|q| {
                    let mut out = Vec::with_capacity(k);
                    index.knn_into(q, a, k, Window::ALL, &mut out);
                    out
                })
                .collect();
            let mut order = Vec::with_capacity(lists.iter().map(Vec::len).sum());
            let mut spans = Vec::with_capacity(nq);
            for list in lists {
                let start = order.len() as u32;
                order.extend(list.iter().map(|n| n.t as u32));
                let end = order.len() as u32;
                spans.push(if start < end { vec![(start, end)] } else { Vec::new() });
            }
            orders.push(order);
            per_action.push(spans);
        }
    }
    let mut spans = Vec::new();
    let mut offsets = Vec::with_capacity(nq * na + 1);
    let mut counts = Vec::with_capacity(nq * na);
    offsets.push(0);
    for q in 0..nq {
        for runs in &per_action {
            let runs = &runs[q];
            counts.push(runs.iter().map(|&(s, e)| e - s).sum());
            spans.extend_from_slice(runs);
            offsets.push(spans.len());
        }
    }
    NeighborPlan { num_queries: nq, num_actions: na, orders, spans, offsets, counts }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl NeighborPlan {
    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of neighbours of query `q` for action `a`.
    pub fn count(&self, q: usize, a: usize) -> usize {
        self.counts[q * self.num_actions + a] as usize
    }

    /// Number of `(query, action)` pairs with no neighbour at all.
    pub fn empty_pairs(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    /// Step indices in `N(q, a)`, in storage order.
    pub fn neighbors(&self, q: usize, a: usize) -> Vec<usize> {
        let p = q * self.num_actions + a;
        let order = &self.orders[a];
        self.spans[self.offsets[p]..self.offsets[p + 1]]
            .iter()
            .flat_map(|&(s, e)| order[s as usize..e as usize].iter().map(|&t| t as usize))
            .collect()
    }

    /// Writes the mean of `values[t - 1]` over `N(q, a)` to
    /// `out[q * num_actions + a]`, or 0 for an empty neighbourhood.
    ///
    /// Sums are carried in double-double precision, so each mean is within
    /// a couple of ulps of the exact average.
    pub fn means(&self, values: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.num_queries * self.num_actions);
        let prefixes: Vec<(Vec<f64>, Vec<f64>)> = self
            .orders
            .iter()
            .map(|order| {
                let mut hi = Vec::with_capacity(order.len() + 1);
                let mut lo = Vec::with_capacity(order.len() + 1);
                let (mut h, mut l) = (0.0f64, 0.0f64);
                hi.push(h);
                lo.push(l);
                for &t in order {
                    let (s, e) = two_sum(h, values[t as usize - 1]);
                    let (s2, e2) = two_sum(s, l + e);
                    h = s2;
                    l = e2;
                    hi.push(h);
                    lo.push(l);
                }
                (hi, lo)
            })
            .collect();
        let na = self.num_actions;
        out.par_iter_mut().enumerate().for_each(|(p, slot)| {
            let count = self.counts[p];
            if count == 0 {
                *slot = 0.0;
                return;
            }
            let (hi, lo) = &prefixes[p % na];
            let (mut h, mut l) = (0.0f64, 0.0f64);
            for &(s, e) in &self.spans[self.offsets[p]..self.offsets[p + 1]] {
                let (s, e) = (s as usize, e as usize);
                let (d, err) = two_sum(hi[e], -hi[s]);
                let (a, b) = two_sum(h, d);
                h = a;
                l += b + err + (lo[e] - lo[s]);
            }
            *slot = (h + l) / count as f64;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::StateVec;
    use crate::norm::Norm;
    use rand::Rng;

    fn random_index(dim: usize, n: usize, seed: u64) -> (NeighborIndex, Vec<Vec<f64>>) {
        let mut rng = crate::seeded_rng(seed, 0);
        let pts: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|_| (rng.gen::<f64>() * 20.0).round() / 20.0).collect()).collect();
        let index = NeighborIndex::build(
            dim,
            2,
            Norm::Euclidean,
            pts.iter().enumerate().map(|(i, p)| (i + 1, StateVec::new(p.clone()).unwrap(), i % 2)),
        )
        .unwrap();
        (index, pts)
    }

    #[test]
    fn plan_matches_queries() {
        for dim in [1, 2] {
            let (index, pts) = random_index(dim, 300, 7 + dim as u64);
            let queries: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let plan = index.neighbor_plan(&queries, 9).unwrap();
            let values: Vec<f64> = (1..=300).map(|t| (t as f64).sin()).collect();
            let mut out = vec![0.0; queries.len() * 2];
            plan.means(&values, &mut out);
            for (q, s) in pts.iter().enumerate() {
                for a in 0..2 {
                    let res = index.query_knn(&StateVec::new(s.clone()).unwrap(), a, 9, Window::ALL).unwrap();
                    let mut want = res.steps();
                    want.sort();
                    let mut got = plan.neighbors(q, a);
                    got.sort();
                    assert_eq!(got, want);
                    let mean = want.iter().map(|&t| values[t - 1]).sum::<f64>() / want.len() as f64;
                    assert!((out[q * 2 + a] - mean).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn empty_action_gives_zero() {
        let index = NeighborIndex::build(1, 2, Norm::Euclidean, [(1, StateVec::new(vec![0.5]).unwrap(), 0)]).unwrap();
        let plan = index.neighbor_plan(&[&[0.1]], 3).unwrap();
        let mut out = vec![f64::NAN; 2];
        plan.means(&[4.0], &mut out);
        assert_eq!(out, vec![4.0, 0.0]);
        assert_eq!(plan.empty_pairs(), 1);
        assert_eq!(plan.count(0, 0), 1);
    }

    #[test]
    fn means_are_accurate_for_large_offsets() {
        let n = 5000;
        let index = NeighborIndex::build(
            1,
            1,
            Norm::Euclidean,
            (1..=n).map(|t| (t, StateVec::new(vec![t as f64]).unwrap(), 0)),
        )
        .unwrap();
        let plan = index.neighbor_plan(&[&[4000.0]], 3).unwrap();
        let values: Vec<f64> = (1..=n).map(|t| if t < 3000 { 1e6 } else { 0.1 }).collect();
        let mut out = vec![0.0];
        plan.means(&values, &mut out);
        assert!((out[0] - 0.1).abs() < 1e-15);
    }
}
