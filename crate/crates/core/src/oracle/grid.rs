use serde::{Deserialize, Serialize};

/// Regular lattice over an axis-aligned box, boundary nodes included.
///
/// Nodes are stored row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Nodes per axis, each at least 2.
    pub n: Vec<usize>,
}

impl Grid {
    /// Lattice whose spacing is as close to `h` as the box allows.
    pub fn with_spacing(lo: Vec<f64>, hi: Vec<f64>, h: f64) -> Grid {
        let n = lo.iter().zip(&hi).map(|(l, u)| (((u - l) / h).round() as usize + 1).max(2)).collect();
        Grid { lo, hi, n }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        (0..self.n[axis]).map(|i| self.coord(axis, i)).collect()
    }

    /// Per-axis lattice indices of a flat node index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.n[axis];
            flat /= self.n[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.n).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(axis, &i)| self.coord(axis, i)).collect()
    }

    /// Whether `s` lies in the box, allowing a relative slack of `1e-9`.
    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter().enumerate().all(|(k, &x)| {
                let eps = 1e-9 * (self.hi[k] - self.lo[k]);
                x >= self.lo[k] - eps && x <= self.hi[k] + eps
            })
    }

    /// Lower cell corner and fractional offset per axis for a point inside
    /// the box.
    pub fn locate(&self, s: &[f64]) -> Vec<(usize, f64)> {
        s.iter()
            .enumerate()
            .map(|(k, &x)| {
                let h = self.spacing(k);
                let u = ((x - self.lo[k]) / h).clamp(0.0, (self.n[k] - 1) as f64);
                let i = (u.floor() as usize).min(self.n[k] - 2);
                (i, (u - i as f64).clamp(0.0, 1.0))
            })
            .collect()
    }

    /// Node-centred cell widths: `h` inside, `h/2` at both ends.
    pub fn cell_weights(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let n = self.n[axis];
        (0..n).map(|i| if i == 0 || i + 1 == n { 0.5 * h } else { h }).collect()
    }
}

/// Applies an `n × n` banded matrix along one axis of a row-major tensor.
pub(crate) fn mode_product(shape: &[usize], axis: usize, m: &BandMatrix, input: &[f64], out: &mut [f64]) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    out.iter_mut().for_each(|x| *x = 0.0);
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let dst = base + i * inner;
            for (j, c) in m.row(i) {
                let src = base + j * inner;
                for l in 0..inner {
                    out[dst + l] += c * input[src + l];
                }
            }
        }
    }
}

/// Row-stochastic matrix storing only the significant band of each row.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    starts: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl BandMatrix {
    /// Builds the matrix from unnormalized row weights, dropping the tails
    /// below `1e-18` of the row total and renormalizing.
    pub fn from_rows(rows: impl Iterator<Item = Vec<f64>>) -> BandMatrix {
        let mut starts = Vec::new();
        let mut offsets = vec![0];
        let mut values = Vec::new();
        for (i, row) in rows.enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                // no mass on the lattice: stay put
                starts.push(i.min(row.len() - 1));
                values.push(1.0);
                offsets.push(values.len());
                continue;
            }
            let cut = 1e-18 * total;
            let first = row.iter().position(|&w| w > cut).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > cut).unwrap_or(row.len() - 1);
            let kept: f64 = row[first..=last].iter().sum();
            starts.push(first);
            values.extend(row[first..=last].iter().map(|w| w / kept));
            offsets.push(values.len());
        }
        BandMatrix { starts, offsets, values }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.starts[i];
        self.values[self.offsets[i]..self.offsets[i + 1]].iter().enumerate().map(move |(j, &c)| (start + j, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let g = Grid::with_spacing(vec![0.0, -1.0], vec![1.0, 1.0], 0.25);
        assert_eq!(g.n, vec![5, 9]);
        for f in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(f)), f);
        }
        assert_eq!(g.node(9), vec![0.25, -1.0]);
        assert_eq!(g.coord(1, 8), 1.0);
        let w: f64 = g.cell_weights(0).iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn locate_handles_edges() {
        let g = Grid::with_spacing(vec![0.0], vec![1.0], 0.1);
        assert_eq!(g.locate(&[1.0]), vec![(9, 1.0)]);
        assert_eq!(g.locate(&[0.0]), vec![(0, 0.0)]);
        let (i, f) = g.locate(&[0.35])[0];
        assert_eq!(i, 3);
        assert!((f - 0.5).abs() < 1e-12);
        assert!(!g.contains(&[1.1]));
    }

    #[test]
    fn mode_product_matches_dense() {
        let shape = [3, 4];
        let m = BandMatrix::from_rows((0..4).map(|i| (0..4).map(|j| 1.0 + (i * j) as f64).collect()));
        let input: Vec<f64> = (0..12).map(|x| x as f64).collect();
        let mut out = vec![0.0; 12];
        mode_product(&shape, 1, &m, &input, &mut out);
        for o in 0..3 {
            for i in 0..4 {
                let row: Vec<f64> = (0..4).map(|j| 1.0 + (i * j) as f64).collect();
                let total: f64 = row.iter().sum();
                let want: f64 = (0..4).map(|j| row[j] / total * input[o * 4 + j]).sum();
                assert!((out[o * 4 + i] - want).abs() < 1e-12);
            }
        }
    }
}
