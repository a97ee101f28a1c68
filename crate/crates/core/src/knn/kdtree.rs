//! Multi-dimensional store: a forest of static kd-trees over time-ordered
//! blocks plus a small unsorted tail.
//!
//! Blocks merge like a binary counter, so a stream of inserts keeps
//! `O(log n)` blocks. Points below the eviction watermark are skipped by the
//! query predicate and physically dropped once they make up half of a block.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Neighbor;
use crate::norm::Norm;

const LEAF: usize = 16;
const TAIL_CAP: usize = 64;
// slack on the pruning bound so rounding in the norm can never hide a tie
const PRUNE_SLACK: f64 = 1.0 + 8.0 * f64::EPSILON;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u32, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Block {
    dim: usize,
    coords: Vec<f64>,
    ts: Vec<usize>,
    nodes: Vec<Node>,
    sorted_ts: Vec<usize>,
}

impl Block {
    fn build(dim: usize, ts: Vec<usize>, coords: Vec<f64>) -> Block {
        let n = ts.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(dim, &coords, &mut order, 0, &mut nodes);
        }
        let mut p_coords = Vec::with_capacity(coords.len());
        let mut p_ts = Vec::with_capacity(n);
        for &i in &order {
            p_coords.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
            p_ts.push(ts[i]);
        }
        let mut sorted_ts = p_ts.clone();
        sorted_ts.sort_unstable();
        Block { dim, coords: p_coords, ts: p_ts, nodes, sorted_ts }
    }

    fn len(&self) -> usize {
        self.ts.len()
    }

    fn t_min(&self) -> usize {
        self.sorted_ts[0]
    }

    fn t_max(&self) -> usize {
        self.sorted_ts[self.sorted_ts.len() - 1]
    }

    fn dead(&self, watermark: usize) -> usize {
        self.sorted_ts.partition_point(|&t| t < watermark)
    }

    fn live_points(&self, watermark: usize) -> (Vec<usize>, Vec<f64>) {
        let mut ts = Vec::new();
        let mut coords = Vec::new();
        for (i, &t) in self.ts.iter().enumerate() {
            if t >= watermark {
                ts.push(t);
                coords.extend_from_slice(&self.coords[i * self.dim..(i + 1) * self.dim]);
            }
        }
        (ts, coords)
    }

    fn search(&self, node: usize, q: &[f64], ctx: &mut Search<'_>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let t = self.ts[i];
                    if t < ctx.lo || t >= ctx.hi {
                        continue;
                    }
                    let d = ctx.norm.distance(q, &self.coords[i * self.dim..(i + 1) * self.dim]);
                    ctx.offer(d, t);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, ctx);
                if ctx.heap.len() < ctx.k || diff.abs() <= ctx.worst() * PRUNE_SLACK {
                    self.search(far as usize, q, ctx);
                }
            }
        }
    }
}

fn build_node(dim: usize, coords: &[f64], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + order.len()) as u32 });
        return id;
    }
    let axis = (0..dim)
        .map(|ax| {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = coords[i * dim + ax];
                (lo.min(v), hi.max(v))
            });
            (ax, hi - lo)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(ax, _)| ax)
        .unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| coords[a * dim + axis].total_cmp(&coords[b * dim + axis]));
    let value = coords[order[mid] * dim + axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo_half, hi_half) = order.split_at_mut(mid);
    let left = build_node(dim, coords, lo_half, offset, nodes);
    let right = build_node(dim, coords, hi_half, offset + mid, nodes);
    nodes[id as usize] = Node::Split { axis: axis as u32, value, left, right };
    id
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate(Neighbor);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.dist.total_cmp(&other.0.dist).then(self.0.t.cmp(&other.0.t))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    k: usize,
    lo: usize,
    hi: usize,
    norm: Norm,
    heap: &'a mut BinaryHeap<Candidate>,
}

impl Search<'_> {
    #[inline]
    fn worst(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |c| c.0.dist)
    }

    #[inline]
    fn offer(&mut self, dist: f64, t: usize) {
        let cand = Candidate(Neighbor { t, dist });
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if cand < *self.heap.peek().unwrap() {
            self.heap.pop();
            self.heap.push(cand);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct KdForest {
    dim: usize,
    blocks: Vec<Block>,
    tail_ts: Vec<usize>,
    tail_coords: Vec<f64>,
}

impl KdForest {
    pub fn new(dim: usize) -> Self {
        KdForest { dim, blocks: Vec::new(), tail_ts: Vec::new(), tail_coords: Vec::new() }
    }

    pub fn bulk(dim: usize, ts: Vec<usize>, coords: Vec<f64>) -> Self {
        let mut forest = KdForest::new(dim);
        if !ts.is_empty() {
            forest.blocks.push(Block::build(dim, ts, coords));
        }
        forest
    }

    pub fn insert(&mut self, t: usize, x: &[f64]) {
        self.tail_ts.push(t);
        self.tail_coords.extend_from_slice(x);
        if self.tail_ts.len() >= TAIL_CAP {
            let ts = std::mem::take(&mut self.tail_ts);
            let coords = std::mem::take(&mut self.tail_coords);
            self.blocks.push(Block::build(self.dim, ts, coords));
            self.merge_tail_blocks(0);
        }
    }

    fn merge_tail_blocks(&mut self, watermark: usize) {
        while self.blocks.len() >= 2 {
            let n = self.blocks.len();
            if self.blocks[n - 1].len() * 2 <= self.blocks[n - 2].len() {
                break;
            }
            let b = self.blocks.pop().unwrap();
            let a = self.blocks.pop().unwrap();
            let (mut ts, mut coords) = a.live_points(watermark);
            let (ts_b, coords_b) = b.live_points(watermark);
            ts.extend(ts_b);
            coords.extend(coords_b);
            if !ts.is_empty() {
                self.blocks.push(Block::build(self.dim, ts, coords));
            }
        }
    }

    /// Physically drops points below `watermark` where that pays off.
    pub fn evict(&mut self, watermark: usize) {
        let dim = self.dim;
        let mut kept = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.drain(..) {
            if block.t_max() < watermark {
                continue;
            }
            if block.t_min() < watermark && 2 * block.dead(watermark) > block.len() {
                let (ts, coords) = block.live_points(watermark);
                kept.push(Block::build(dim, ts, coords));
            } else {
                kept.push(block);
            }
        }
        self.blocks = kept;
        if self.tail_ts.iter().any(|&t| t < watermark) {
            let mut ts = Vec::new();
            let mut coords = Vec::new();
            for (i, &t) in self.tail_ts.iter().enumerate() {
                if t >= watermark {
                    ts.push(t);
                    coords.extend_from_slice(&self.tail_coords[i * dim..(i + 1) * dim]);
                }
            }
            self.tail_ts = ts;
            self.tail_coords = coords;
        }
    }

    pub fn knn_into(&self, q: &[f64], k: usize, lo: usize, hi: usize, norm: Norm, out: &mut Vec<Neighbor>) {
        out.clear();
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut ctx = Search { k, lo, hi, norm, heap: &mut heap };
        for block in &self.blocks {
            if block.t_max() < lo || block.t_min() >= hi {
                continue;
            }
            block.search(0, q, &mut ctx);
        }
        for (i, &t) in self.tail_ts.iter().enumerate() {
            if t < lo || t >= hi {
                continue;
            }
            let d = norm.distance(q, &self.tail_coords[i * self.dim..(i + 1) * self.dim]);
            ctx.offer(d, t);
        }
        out.extend(heap.into_sorted_vec().into_iter().map(|c| c.0));
    }

    #[cfg(test)]
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}
