//! Ground-truth `Q*` for the built-in environments by value iteration on a
//! fine lattice, plus checks of its Lipschitz bound and Bellman residual.

mod grid;

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvConstants, Environment, KernelForm, Support, TruncationBox};
use crate::norm::Norm;

pub use grid::Grid;
use grid::{mode_product, BandMatrix};

/// Sweep cap; far above what any `γ < 1` and sensible tolerance needs.
const MAX_SWEEPS: usize = 1_000_000;
const MAX_NODES: usize = 20_000_000;

/// Tabulated approximation of `Q*` on a lattice.
#[derive(Debug, Clone)]
pub struct OracleQ {
    env: String,
    num_actions: usize,
    gamma: f64,
    resolution: f64,
    tol: f64,
    grid: Grid,
    // node-major: table[node * num_actions + a]
    table: Vec<f64>,
    residual: f64,
    sweeps: usize,
    truncation: Option<TruncationBox>,
}

/// First line of an exported oracle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleHeader {
    pub env: String,
    pub num_actions: usize,
    pub gamma: f64,
    pub resolution: f64,
    pub tol: f64,
    pub residual: f64,
    pub sweeps: usize,
    pub grid: Grid,
    pub truncation: Option<TruncationBox>,
}

fn domain(env: &dyn Environment) -> Result<(Vec<f64>, Vec<f64>, Option<TruncationBox>)> {
    match env.support() {
        Support::Bounded { lo, hi } => Ok((lo, hi, None)),
        Support::Unbounded => match env.truncation_box() {
            Some(b) => Ok((b.lo.clone(), b.hi.clone(), Some(b))),
            None => Err(Error::Unsupported(format!(
                "environment {} is unbounded and declares no truncation box",
                env.name()
            ))),
        },
    }
}

/// Per-axis transition matrices `K_a[i][j] ∝ w_j·p₁(y_j | x_i, a)`.
fn axis_kernels(env: &dyn Environment, grid: &Grid) -> Vec<Vec<BandMatrix>> {
    (0..env.num_actions())
        .map(|a| {
            (0..grid.dim())
                .map(|axis| {
                    let nodes = grid.axis_nodes(axis);
                    let w = grid.cell_weights(axis);
                    BandMatrix::from_rows(
                        nodes
                            .iter()
                            .map(|&x| nodes.iter().zip(&w).map(|(&y, &wy)| wy * env.axis_density(y, x, a)).collect()),
                    )
                })
                .collect()
        })
        .collect()
}

fn expect_values(grid: &Grid, kernels: &[BandMatrix], v: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(v);
    scratch.resize(v.len(), 0.0);
    for (axis, k) in kernels.iter().enumerate() {
        mode_product(&grid.n, axis, k, out, scratch);
        std::mem::swap(out, scratch);
    }
}

/// Solves `Q = r + γ·E[max_a' Q(S', a')]` on a lattice of spacing about `h`
/// over the environment's box (or truncation box).
///
/// Iterates from `Q ≡ 0` until the sup-norm change drops to `tol·(1-γ)`;
/// the recorded residual is `‖TQ - Q‖∞` of the returned table, where `T` is
/// the lattice Bellman operator. Kernel integrals use node-centred cells
/// with each row renormalized to unit mass. Identity kernels are solved per
/// node in closed form.
pub fn grid_value_iteration(env: &dyn Environment, h: f64, gamma: f64, tol: f64) -> Result<OracleQ> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("resolution must be positive, got {h}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let form = env.kernel_form();
    if form == KernelForm::Unavailable {
        return Err(Error::Unsupported(format!("environment {} exposes no closed-form kernel", env.name())));
    }
    let (lo, hi, truncation) = domain(env)?;
    let grid = Grid::with_spacing(lo, hi, h);
    let nodes = grid.n.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    if nodes.is_none_or(|n| n > MAX_NODES) {
        return Err(Error::invalid(format!("lattice with spacing {h} is too large")));
    }
    let na = env.num_actions();
    let len = grid.len();
    let mut rewards = vec![0.0; len * na];
    for i in 0..len {
        let s = grid.node(i);
        for a in 0..na {
            rewards[i * na + a] = env.mean_reward(&s, a);
        }
    }

    let mut oracle = OracleQ {
        env: env.name().to_string(),
        num_actions: na,
        gamma,
        resolution: h,
        tol,
        grid,
        table: vec![0.0; len * na],
        residual: 0.0,
        sweeps: 0,
        truncation,
    };

    if form == KernelForm::Identity {
        // V = max_a r/(1-γ); Q(a) = r(a) + γV
        for i in 0..len {
            let r = &rewards[i * na..(i + 1) * na];
            let v = r.iter().copied().fold(f64::NEG_INFINITY, f64::max) / (1.0 - gamma);
            for (q, ra) in oracle.table[i * na..(i + 1) * na].iter_mut().zip(r) {
                *q = ra + gamma * v;
            }
        }
        oracle.residual = oracle.identity_residual(&rewards);
        return Ok(oracle);
    }

    let kernels = axis_kernels(env, &oracle.grid);
    let mut v = vec![0.0; len];
    let mut next = vec![0.0; len * na];
    let mut ev = Vec::with_capacity(len);
    let mut scratch = Vec::with_capacity(len);
    let stop = tol * (1.0 - gamma);
    loop {
        oracle.values_into(&mut v);
        let mut change = 0.0f64;
        for a in 0..na {
            expect_values(&oracle.grid, &kernels[a], &v, &mut scratch, &mut ev);
            for i in 0..len {
                let q = rewards[i * na + a] + gamma * ev[i];
                change = change.max((q - oracle.table[i * na + a]).abs());
                next[i * na + a] = q;
            }
        }
        std::mem::swap(&mut oracle.table, &mut next);
        oracle.sweeps += 1;
        if change <= stop {
            break;
        }
        if oracle.sweeps >= MAX_SWEEPS {
            return Err(Error::invalid("value iteration did not converge"));
        }
    }
    // residual of the stored table
    oracle.values_into(&mut v);
    let mut residual = 0.0f64;
    for a in 0..na {
        expect_values(&oracle.grid, &kernels[a], &v, &mut scratch, &mut ev);
        for i in 0..len {
            let q = rewards[i * na + a] + gamma * ev[i];
            residual = residual.max((q - oracle.table[i * na + a]).abs());
        }
    }
    oracle.residual = residual;
    Ok(oracle)
}

/// Lipschitz constant of `Q*`: `L_r + γ·C_p·R/(1-γ)`.
pub fn lipschitz_constant(constants: &EnvConstants, gamma: f64) -> f64 {
    constants.reward_lipschitz + gamma * constants.kernel_lipschitz_mass * constants.reward_bound / (1.0 - gamma)
}

/// Outcome of [`check_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub constant: f64,
    pub slack: f64,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|ΔQ| - L·‖Δs‖` over the checked pairs.
    pub worst_excess: f64,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

impl OracleQ {
    pub fn env_name(&self) -> &str {
        &self.env
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Requested lattice spacing.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sup Bellman residual of the table on the lattice.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn truncation(&self) -> Option<&TruncationBox> {
        self.truncation.as_ref()
    }

    /// Table value at a lattice node.
    pub fn node_value(&self, node: usize, a: usize) -> f64 {
        self.table[node * self.num_actions + a]
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        self.grid.contains(s)
    }

    fn values_into(&self, v: &mut [f64]) {
        let na = self.num_actions;
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = self.table[i * na..(i + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }

    fn identity_residual(&self, rewards: &[f64]) -> f64 {
        let na = self.num_actions;
        let mut v = vec![0.0; self.grid.len()];
        self.values_into(&mut v);
        (0..self.grid.len() * na)
            .map(|p| (rewards[p] + self.gamma * v[p / na] - self.table[p]).abs())
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation of the table at `s`.
    pub fn eval(&self, s: &[f64], a: usize) -> Result<f64> {
        if a >= self.num_actions {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        if s.len() != self.dim() {
            return Err(Error::invalid(format!("point has dimension {}, expected {}", s.len(), self.dim())));
        }
        if !self.grid.contains(s) {
            return Err(Error::OutOfDomain { point: s.to_vec() });
        }
        let cell = self.grid.locate(s);
        let d = self.dim();
        let mut idx = vec![0usize; d];
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for (k, &(i, f)) in cell.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    idx[k] = i + 1;
                    w *= f;
                } else {
                    idx[k] = i;
                    w *= 1.0 - f;
                }
            }
            if w != 0.0 {
                total += w * self.node_value(self.grid.flat_index(&idx), a);
            }
        }
        Ok(total)
    }

    /// Oracle estimate of `max_a Q*(s, a)`.
    pub fn value(&self, s: &[f64]) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.num_actions {
            best = best.max(self.eval(s, a)?);
        }
        Ok(best)
    }

    pub fn header(&self) -> OracleHeader {
        OracleHeader {
            env: self.env.clone(),
            num_actions: self.num_actions,
            gamma: self.gamma,
            resolution: self.resolution,
            tol: self.tol,
            residual: self.residual,
            sweeps: self.sweeps,
            grid: self.grid.clone(),
            truncation: self.truncation.clone(),
        }
    }

    /// Writes `# {header json}` followed by CSV rows `s0..,q0..`, one per
    /// node.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.header())?)?;
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("s{k}")).collect();
        header.extend((0..self.num_actions).map(|a| format!("q{a}")));
        out.write_record(&header)?;
        for i in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.node(i).iter().map(f64::to_string).collect();
            row.extend((0..self.num_actions).map(|a| self.node_value(i, a).to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let json = first
            .trim_end()
            .strip_prefix("# ")
            .ok_or_else(|| Error::invalid("oracle file must start with a '# {json}' header"))?;
        let header: OracleHeader = serde_json::from_str(json)?;
        let grid = header.grid.clone();
        if grid.n.iter().any(|&n| n < 2) || grid.lo.len() != grid.n.len() || grid.hi.len() != grid.n.len() {
            return Err(Error::invalid("oracle header has a malformed grid"));
        }
        let na = header.num_actions;
        let d = grid.dim();
        let mut table = Vec::with_capacity(grid.len() * na);
        let mut rows = csv::Reader::from_reader(reader);
        for (i, row) in rows.records().enumerate() {
            let row = row?;
            if row.len() != d + na || i >= grid.len() {
                return Err(Error::invalid(format!("oracle row {} is malformed", i + 1)));
            }
            let node = grid.node(i);
            for (k, x) in node.iter().enumerate() {
                let got: f64 = crate::offline::parse_field(&row, k)?;
                if (got - x).abs() > 1e-9 * (1.0 + x.abs()) {
                    return Err(Error::invalid(format!("oracle row {} is not at node {node:?}", i + 1)));
                }
            }
            for a in 0..na {
                table.push(crate::offline::parse_field(&row, d + a)?);
            }
        }
        if table.len() != grid.len() * na {
            return Err(Error::invalid("oracle file is missing rows"));
        }
        Ok(OracleQ {
            env: header.env,
            num_actions: na,
            gamma: header.gamma,
            resolution: header.resolution,
            tol: header.tol,
            grid,
            table,
            residual: header.residual,
            sweeps: header.sweeps,
            truncation: header.truncation,
        })
    }
}

/// `Q*(s, a)` by interpolation; points outside the lattice box are an
/// [`Error::OutOfDomain`].
pub fn oracle_eval(oracle: &OracleQ, s: &[f64], a: usize) -> Result<f64> {
    oracle.eval(s, a)
}

/// Sup over points and actions of `|Q̂(s,a) - r(s,a) - γ·E[max_a' Q̂(S',a')]|`,
/// with the expectation taken by the oracle's lattice quadrature.
pub fn bellman_residual(oracle: &OracleQ, env: &dyn Environment, points: &[Vec<f64>]) -> Result<f64> {
    if env.num_actions() != oracle.num_actions || env.dim() != oracle.dim() {
        return Err(Error::invalid("oracle does not match the environment"));
    }
    let form = env.kernel_form();
    if form == KernelForm::Unavailable {
        return Err(Error::Unsupported(format!("environment {} exposes no kernel", env.name())));
    }
    if env.support() == Support::Unbounded && oracle.truncation.is_none() {
        return Err(Error::Unsupported("unbounded environment without a truncation box".into()));
    }
    let grid = &oracle.grid;
    let mut v = vec![0.0; grid.len()];
    oracle.values_into(&mut v);
    let weights: Vec<Vec<f64>> = (0..grid.dim()).map(|k| grid.cell_weights(k)).collect();
    let nodes: Vec<Vec<f64>> = (0..grid.dim()).map(|k| grid.axis_nodes(k)).collect();
    let mut worst = 0.0f64;
    for s in points {
        for a in 0..oracle.num_actions {
            let q = oracle.eval(s, a)?;
            let next = match form {
                KernelForm::Identity => oracle.value(s)?,
                _ => {
                    // contract V with one weight vector per axis, last axis first
                    let mut tensor = v.clone();
                    for axis in (0..grid.dim()).rev() {
                        let mut w: Vec<f64> = nodes[axis]
                            .iter()
                            .zip(&weights[axis])
                            .map(|(&y, &wy)| wy * env.axis_density(y, s[axis], a))
                            .collect();
                        let total: f64 = w.iter().sum();
                        if total > 0.0 {
                            w.iter_mut().for_each(|x| *x /= total);
                        }
                        let n = grid.n[axis];
                        tensor = tensor.chunks(n).map(|c| c.iter().zip(&w).map(|(x, y)| x * y).sum()).collect();
                    }
                    tensor[0]
                }
            };
            let r = env.mean_reward(s, a);
            worst = worst.max((q - r - oracle.gamma * next).abs());
        }
    }
    Ok(worst)
}

/// Checks `|Q(s,a) - Q(s',a)| ≤ L‖s - s'‖ + slack` on every pair of lattice
/// nodes within distance `max_dist`, with
/// `slack = 2·(tol + L·‖h‖/2)` covering the value-iteration tolerance and
/// the interpolation error of an `L`-Lipschitz function.
pub fn check_lipschitz(oracle: &OracleQ, constant: f64, norm: Norm, max_dist: f64) -> LipschitzCheck {
    let grid = &oracle.grid;
    let d = grid.dim();
    let h: Vec<f64> = (0..d).map(|k| grid.spacing(k)).collect();
    let half_cell = norm.distance(&vec![0.0; d], &h) / 2.0;
    let slack = 2.0 * (oracle.tol + constant * half_cell);
    let mut check = LipschitzCheck { constant, slack, pairs: 0, violations: 0, worst_excess: f64::NEG_INFINITY };
    if !constant.is_finite() {
        return check;
    }
    let reach: Vec<usize> = h.iter().map(|hk| (max_dist / hk).floor() as usize).collect();
    // offsets in a half box so each unordered pair is visited once
    let mut offsets: Vec<Vec<isize>> = Vec::new();
    let mut cur = vec![0isize; d];
    fn enumerate(k: usize, reach: &[usize], cur: &mut Vec<isize>, out: &mut Vec<Vec<isize>>) {
        if k == reach.len() {
            if cur.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
                out.push(cur.clone());
            }
            return;
        }
        let r = reach[k] as isize;
        for o in -r..=r {
            cur[k] = o;
            enumerate(k + 1, reach, cur, out);
        }
    }
    enumerate(0, &reach, &mut cur, &mut offsets);
    let offsets: Vec<(Vec<isize>, f64)> = offsets
        .into_iter()
        .map(|o| {
            let delta: Vec<f64> = o.iter().zip(&h).map(|(&x, hk)| x as f64 * hk).collect();
            let dist = norm.distance(&vec![0.0; d], &delta);
            (o, dist)
        })
        .filter(|(_, dist)| *dist <= max_dist)
        .collect();
    for i in 0..grid.len() {
        let idx = grid.multi_index(i);
        for (o, _) in &offsets {
            let mut jdx = Vec::with_capacity(d);
            let inside = idx.iter().zip(o).zip(&grid.n).all(|((&x, &dx), &n)| {
                let y = x as isize + dx;
                jdx.push(y as usize);
                y >= 0 && (y as usize) < n
            });
            if !inside {
                continue;
            }
            let j = grid.flat_index(&jdx);
            let dist = norm.distance(&grid.node(i), &grid.node(j));
            for a in 0..oracle.num_actions {
                let excess = (oracle.node_value(i, a) - oracle.node_value(j, a)).abs() - constant * dist;
                check.pairs += 1;
                check.worst_excess = check.worst_excess.max(excess);
                if excess > slack {
                    check.violations += 1;
                }
            }
        }
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Ar1Env, BoxEnv, ConstantEnv};

    #[test]
    fn one_state_two_actions() {
        let env = ConstantEnv::new(1, vec![0.0, 1.0], 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.5, 0.5, 1e-12).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(oracle.eval(&[s], 1).unwrap(), 2.0);
            assert_eq!(oracle.eval(&[s], 0).unwrap(), 1.0);
        }
        assert_eq!(oracle.residual(), 0.0);
    }

    #[test]
    fn constant_reward_fixed_point() {
        let env = ConstantEnv::new(2, vec![0.7, 0.7], 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.25, 0.9, 1e-10).unwrap();
        for s in [[0.1, 0.9], [0.5, 0.5]] {
            assert!((oracle.eval(&s, 0).unwrap() - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn box_oracle_residual_and_range() {
        let env = BoxEnv::new(1, 0.0).unwrap();
        let gamma = 0.8;
        let oracle = grid_value_iteration(&env, 0.01, gamma, 1e-9).unwrap();
        assert!(oracle.residual() <= oracle.tol());
        for i in 0..oracle.grid().len() {
            for a in 0..2 {
                let q = oracle.node_value(i, a);
                assert!((0.0..=1.0 / (1.0 - gamma)).contains(&q));
            }
        }
        let nodes: Vec<Vec<f64>> = (0..oracle.grid().len()).map(|i| oracle.grid().node(i)).collect();
        let r = bellman_residual(&oracle, &env, &nodes).unwrap();
        assert!(r <= oracle.tol() * 1.001 + 1e-12, "{r}");
    }

    #[test]
    fn interpolation_identities() {
        let env = BoxEnv::new(1, 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.1, 0.5, 1e-9).unwrap();
        let g = oracle.grid();
        for i in [0, 3, 10] {
            let x = g.node(i);
            assert_eq!(oracle.eval(&x, 1).unwrap(), oracle.node_value(i, 1));
        }
        let mid = 0.5 * (g.coord(0, 3) + g.coord(0, 4));
        let want = 0.5 * (oracle.node_value(3, 0) + oracle.node_value(4, 0));
        assert!((oracle.eval(&[mid], 0).unwrap() - want).abs() < 1e-12);
        assert!(matches!(oracle.eval(&[1.2], 0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn lipschitz_formula() {
        let c = EnvConstants {
            reward_bound: 1.0,
            reward_lipschitz: 1.0,
            kernel_lipschitz_mass: 2.0,
            noise_sigma: 0.0,
            mixing: 1,
        };
        assert_eq!(lipschitz_constant(&c, 0.5), 3.0);
        assert_eq!(lipschitz_constant(&c, 0.0), 1.0);
        assert!(lipschitz_constant(&c, 0.9) > lipschitz_constant(&c, 0.8));
    }

    #[test]
    fn box_and_ar1_oracles_are_lipschitz() {
        let gamma = 0.8;
        let norm = Norm::Euclidean;
        let env = BoxEnv::new(1, 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.01, gamma, 1e-9).unwrap();
        let l = lipschitz_constant(&env.constants(norm), gamma);
        let check = check_lipschitz(&oracle, l, norm, 0.2);
        assert!(check.pairs > 0 && check.holds(), "{check:?}");

        let env = Ar1Env::new(1, 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.02, gamma, 1e-9).unwrap();
        assert!(oracle.truncation().is_some());
        let l = lipschitz_constant(&env.constants(norm), gamma);
        let check = check_lipschitz(&oracle, l, norm, 0.5);
        assert!(check.holds(), "{check:?}");
    }

    #[test]
    fn refinement_is_first_order_or_better() {
        let env = BoxEnv::new(1, 0.0).unwrap();
        let coarse = grid_value_iteration(&env, 0.02, 0.8, 1e-10).unwrap();
        let fine = grid_value_iteration(&env, 0.01, 0.8, 1e-10).unwrap();
        let finest = grid_value_iteration(&env, 0.005, 0.8, 1e-10).unwrap();
        let diff = |a: &OracleQ, b: &OracleQ| {
            (0..=50)
                .map(|i| i as f64 / 50.0)
                .flat_map(|x| (0..2).map(move |u| (x, u)))
                .map(|(x, u)| (a.eval(&[x], u).unwrap() - b.eval(&[x], u).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let d1 = diff(&coarse, &fine);
        let d2 = diff(&fine, &finest);
        // change bounded by C·h with C taken from the coarser pair
        assert!(d2 <= d1 * 0.5 * 1.1 + 1e-9, "{d1} {d2}");
    }

    #[test]
    fn off_node_residual_shrinks_with_h() {
        let env = BoxEnv::new(1, 0.0).unwrap();
        let points: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 + 0.37) / 40.0]).collect();
        let medians: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let oracle = grid_value_iteration(&env, h, 0.8, 1e-11).unwrap();
                let mut r: Vec<f64> =
                    points.iter().map(|p| bellman_residual(&oracle, &env, std::slice::from_ref(p)).unwrap()).collect();
                r.sort_by(f64::total_cmp);
                r[r.len() / 2]
            })
            .collect();
        assert!(medians[1] < medians[0] && medians[2] < medians[1], "{medians:?}");
    }

    #[test]
    fn separable_two_dimensional_oracle() {
        let env = BoxEnv::new(2, 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.05, 0.7, 1e-9).unwrap();
        assert!(oracle.residual() <= oracle.tol());
        let pts = vec![vec![0.33, 0.71], vec![0.9, 0.05]];
        let r = bellman_residual(&oracle, &env, &pts).unwrap();
        assert!(r < 0.05, "{r}");
    }

    #[test]
    fn export_round_trip() {
        let env = BoxEnv::new(1, 0.0).unwrap();
        let oracle = grid_value_iteration(&env, 0.05, 0.8, 1e-9).unwrap();
        let mut buf = Vec::new();
        oracle.write(&mut buf).unwrap();
        let loaded = OracleQ::read(&buf[..]).unwrap();
        assert_eq!(loaded.header(), oracle.header());
        assert_eq!(loaded.table, oracle.table);
        assert!(OracleQ::read(&b"s0,q0\n"[..]).is_err());
    }
}
