//! One-dimensional store: a sorted sequence of `(x, t)` split into chunks so
//! inserts and removals stay cheap while neighbours are found by walking
//! outwards from the query position.

use std::cmp::Ordering;

use super::Neighbor;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Entry {
    pub x: f64,
    pub t: usize,
}

#[inline]
fn key_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LineStore {
    chunks: Vec<Vec<Entry>>,
}

impl LineStore {
    pub fn from_sorted(mut entries: Vec<Entry>) -> Self {
        entries.sort_unstable_by(|a, b| key_cmp((a.x, a.t), (b.x, b.t)));
        let chunks = entries.chunks(CHUNK).map(<[Entry]>::to_vec).collect();
        LineStore { chunks }
    }

    fn chunk_for(&self, key: (f64, usize)) -> usize {
        let ci = self.chunks.partition_point(|c| key_cmp((c[c.len() - 1].x, c[c.len() - 1].t), key) == Ordering::Less);
        ci.min(self.chunks.len().saturating_sub(1))
    }

    pub fn insert(&mut self, x: f64, t: usize) {
        if self.chunks.is_empty() {
            self.chunks.push(vec![Entry { x, t }]);
            return;
        }
        let ci = self.chunk_for((x, t));
        let chunk = &mut self.chunks[ci];
        let pos = chunk.partition_point(|e| key_cmp((e.x, e.t), (x, t)) == Ordering::Less);
        chunk.insert(pos, Entry { x, t });
        if chunk.len() > 2 * CHUNK {
            let tail = chunk.split_off(CHUNK);
            self.chunks.insert(ci + 1, tail);
        }
    }

    pub fn remove(&mut self, x: f64, t: usize) -> bool {
        if self.chunks.is_empty() {
            return false;
        }
        let ci = self.chunk_for((x, t));
        let chunk = &mut self.chunks[ci];
        match chunk.binary_search_by(|e| key_cmp((e.x, e.t), (x, t))) {
            Ok(pos) => {
                chunk.remove(pos);
                if chunk.is_empty() {
                    self.chunks.remove(ci);
                }
                true
            }
            Err(_) => false,
        }
    }

    pub fn flatten(&self) -> Vec<Entry> {
        self.chunks.iter().flatten().copied().collect()
    }

    /// Position of the first entry with `x >= s`.
    fn lower_bound(&self, s: f64) -> (usize, usize) {
        let ci = self.chunks.partition_point(|c| c[c.len() - 1].x < s);
        if ci == self.chunks.len() {
            return (ci, 0);
        }
        (ci, self.chunks[ci].partition_point(|e| e.x < s))
    }

    #[inline]
    fn prev(&self, (ci, pi): (usize, usize)) -> Option<(usize, usize)> {
        if pi > 0 {
            Some((ci, pi - 1))
        } else if ci > 0 {
            Some((ci - 1, self.chunks[ci - 1].len() - 1))
        } else {
            None
        }
    }

    #[inline]
    fn next(&self, (ci, pi): (usize, usize)) -> Option<(usize, usize)> {
        if pi + 1 < self.chunks[ci].len() {
            Some((ci, pi + 1))
        } else if ci + 1 < self.chunks.len() {
            Some((ci + 1, 0))
        } else {
            None
        }
    }

    #[inline]
    fn at(&self, (ci, pi): (usize, usize)) -> Entry {
        self.chunks[ci][pi]
    }

    /// Exact k nearest neighbours of `s` among entries with `lo <= t < hi`,
    /// ordered by `(distance, t)`.
    pub fn knn_into(&self, s: f64, k: usize, lo: usize, hi: usize, out: &mut Vec<Neighbor>) {
        out.clear();
        if self.chunks.is_empty() {
            return;
        }
        let start = self.lower_bound(s);
        let mut left = self.prev(start);
        let mut right = (start.0 < self.chunks.len()).then_some(start);
        let mut kth = f64::INFINITY;
        let mut count = 0usize;
        loop {
            // distances grow monotonically along each direction
            let dl = left.map(|c| s - self.at(c).x);
            let dr = right.map(|c| self.at(c).x - s);
            let (take_left, d) = match (dl, dr) {
                (None, None) => break,
                (Some(a), None) => (true, a),
                (None, Some(b)) => (false, b),
                (Some(a), Some(b)) => {
                    if a <= b {
                        (true, a)
                    } else {
                        (false, b)
                    }
                }
            };
            if count >= k && d > kth {
                break;
            }
            let cursor = if take_left { left.unwrap() } else { right.unwrap() };
            let e = self.at(cursor);
            if e.t >= lo && e.t < hi {
                out.push(Neighbor { t: e.t, dist: d });
                count += 1;
                if count == k {
                    kth = d;
                }
            }
            if take_left {
                left = self.prev(cursor);
            } else {
                right = self.next(cursor);
            }
        }
        out.sort_unstable_by(|a, b| a.dist.total_cmp(&b.dist).then(a.t.cmp(&b.t)));
        out.truncate(k);
    }
}

/// Positions (into `flat`) of the k nearest neighbours of `s` under the
/// `(distance, t)` order, returned as maximal runs `[start, end)`.
///
/// Uses binary searches only, so the cost does not grow with `k`.
pub(crate) fn knn_runs(flat: &[Entry], s: f64, k: usize, runs: &mut Vec<(usize, usize)>) {
    runs.clear();
    let n = flat.len();
    if n == 0 {
        return;
    }
    if k >= n {
        runs.push((0, n));
        return;
    }
    let x = |i: usize| flat[i].x;
    // optimal contiguous window of k points
    let (mut lo, mut hi) = (0usize, n - k);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if s - x(mid) > x(mid + k) - s {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let r = (x(lo) - s).abs().max((x(lo + k - 1) - s).abs());
    let p = flat.partition_point(|e| e.x < s);
    let left = &flat[..p];
    let right = &flat[p..];
    let ls = left.partition_point(|e| s - e.x >= r);
    let lt = left.partition_point(|e| s - e.x > r);
    let re = p + right.partition_point(|e| e.x - s < r);
    let rt = p + right.partition_point(|e| e.x - s <= r);
    let need = k - (re - ls);
    if (ls - lt) + (rt - re) == need {
        runs.push((lt, rt));
        return;
    }
    // boundary ties: keep the `need` smallest step indices
    let mut ties: Vec<(usize, usize)> = (lt..ls).chain(re..rt).map(|i| (flat[i].t, i)).collect();
    ties.sort_unstable();
    let mut picked: Vec<usize> = ties[..need].iter().map(|&(_, i)| i).collect();
    picked.extend(ls..re);
    picked.sort_unstable();
    for i in picked {
        match runs.last_mut() {
            Some(last) if last.1 == i => last.1 += 1,
            _ => runs.push((i, i + 1)),
        }
    }
}
