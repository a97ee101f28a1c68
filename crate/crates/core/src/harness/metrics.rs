use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{sample_action, Environment, Policy, StateVec};
use crate::oracle::OracleQ;

/// A metric value plus the number of points skipped as out of domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub used: usize,
    pub skipped: usize,
}

fn per_point_errors<F>(estimator: &F, oracle: &OracleQ, points: &[StateVec]) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&StateVec, usize) -> Result<f64>,
{
    let mut errors = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for s in points {
        if !oracle.contains(s) {
            skipped += 1;
            continue;
        }
        let mut worst = 0.0f64;
        for a in 0..oracle.num_actions() {
            let truth = oracle.eval(s, a)?;
            worst = worst.max((estimator(s, a)? - truth).abs());
        }
        errors.push(worst);
    }
    Ok((errors, skipped))
}

/// `max_{s, a} |q(s,a) - Q*(s,a)|` over a query set. Points outside the
/// oracle's box are skipped and counted.
pub fn sup_error<F>(estimator: F, oracle: &OracleQ, query_set: &[StateVec]) -> Result<Metric>
where
    F: Fn(&StateVec, usize) -> Result<f64>,
{
    if query_set.is_empty() {
        return Err(Error::invalid("query set is empty"));
    }
    let (errors, skipped) = per_point_errors(&estimator, oracle, query_set)?;
    if errors.is_empty() {
        return Err(Error::invalid("every query point lies outside the oracle domain"));
    }
    Ok(Metric { value: errors.iter().copied().fold(0.0, f64::max), used: errors.len(), skipped })
}

/// Mean over stationary samples of `max_a |q(s,a) - Q*(s,a)|`. Samples
/// outside the oracle's box are skipped and counted.
pub fn weighted_l1_error<F>(estimator: F, oracle: &OracleQ, samples: &[StateVec]) -> Result<Metric>
where
    F: Fn(&StateVec, usize) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::invalid("sample set is empty"));
    }
    let (errors, skipped) = per_point_errors(&estimator, oracle, samples)?;
    if errors.is_empty() {
        return Err(Error::invalid("every sample lies outside the oracle domain"));
    }
    let value = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(Metric { value, used: errors.len(), skipped })
}

/// Runs the behaviour chain from the environment's initial state for
/// `burn_in` steps, then keeps every `thin`-th state until `n` are
/// collected.
pub fn stationary_samples<R: Rng>(
    env: &dyn Environment,
    policy: &Policy,
    burn_in: usize,
    n: usize,
    thin: usize,
    rng: &mut R,
) -> Result<Vec<StateVec>> {
    if n == 0 || thin == 0 {
        return Err(Error::invalid("need n >= 1 and thin >= 1"));
    }
    let mut s = env.initial_state();
    let advance = |s: &StateVec, rng: &mut R| -> Result<StateVec> {
        let a = sample_action(policy, s, rng)?;
        StateVec::new(env.sample_next(s, a, rng))
    };
    for _ in 0..burn_in {
        s = advance(&s, rng)?;
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        for _ in 0..thin {
            s = advance(&s, rng)?;
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// Regular lattice with about `target` points over a box; each axis gets
/// `⌈target^{1/d}⌉` cell-centred points.
pub fn query_grid(lo: &[f64], hi: &[f64], target: usize) -> Vec<StateVec> {
    let d = lo.len();
    let per_axis = ((target.max(1) as f64).powf(1.0 / d as f64) - 1e-9).ceil().max(1.0) as usize;
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut coords = vec![0.0; d];
            for k in (0..d).rev() {
                let i = flat % per_axis;
                flat /= per_axis;
                coords[k] = lo[k] + (hi[k] - lo[k]) * (i as f64 + 0.5) / per_axis as f64;
            }
            StateVec::from_trusted(coords)
        })
        .collect()
}

/// Compares the mean of `mean(s)` over samples drawn after `burn_in` and
/// after `2·burn_in` steps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BurnInDiagnostic {
    pub mean_single: f64,
    pub mean_double: f64,
    /// Standard error of the difference, treating thinned samples as
    /// independent.
    pub std_error: f64,
}

impl BurnInDiagnostic {
    /// Difference in units of its standard error.
    pub fn z_score(&self) -> f64 {
        if self.std_error > 0.0 {
            (self.mean_single - self.mean_double).abs() / self.std_error
        } else {
            0.0
        }
    }
}

pub fn burn_in_diagnostic<R: Rng>(
    env: &dyn Environment,
    policy: &Policy,
    burn_in: usize,
    n: usize,
    thin: usize,
    rng: &mut R,
) -> Result<BurnInDiagnostic> {
    let stats = |xs: Vec<StateVec>| {
        let f: Vec<f64> = xs.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        let m = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (f.len().max(2) - 1) as f64;
        (m, var / f.len() as f64)
    };
    let (m1, v1) = stats(stationary_samples(env, policy, burn_in, n, thin, rng)?);
    let (m2, v2) = stats(stationary_samples(env, policy, 2 * burn_in, n, thin, rng)?);
    Ok(BurnInDiagnostic { mean_single: m1, mean_double: m2, std_error: (v1 + v2).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Ar1Env, ConstantEnv};
    use crate::oracle::grid_value_iteration;
    use crate::seeded_rng;

    fn constant_oracle() -> OracleQ {
        let env = ConstantEnv::new(1, vec![0.0, 1.0], 0.0).unwrap();
        grid_value_iteration(&env, 0.1, 0.5, 1e-12).unwrap()
    }

    fn pts(xs: &[f64]) -> Vec<StateVec> {
        xs.iter().map(|x| StateVec::new(vec![*x]).unwrap()).collect()
    }

    #[test]
    fn sup_error_identities() {
        let oracle = constant_oracle();
        let q = pts(&[0.0, 0.25, 0.9]);
        let exact = sup_error(|s, a| oracle.eval(s, a), &oracle, &q).unwrap();
        assert_eq!(exact.value, 0.0);
        let shifted = sup_error(|s, a| Ok(oracle.eval(s, a)? + 0.3), &oracle, &q).unwrap();
        assert!((shifted.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sup_error_matches_enumeration_and_skips() {
        let oracle = constant_oracle();
        let q = pts(&[0.1, 0.5, 0.8, 1.5]);
        let est = |s: &StateVec, a: usize| Ok(s[0] * (a as f64 + 1.0));
        let m = sup_error(est, &oracle, &q).unwrap();
        // hand loop over the in-domain points
        let mut want = 0.0f64;
        for x in [0.1, 0.5, 0.8] {
            want = want.max((x - 1.0f64).abs()).max((2.0 * x - 2.0f64).abs());
        }
        assert_eq!(m.value, want);
        assert_eq!((m.used, m.skipped), (3, 1));
        assert!(sup_error(est, &oracle, &pts(&[2.0])).is_err());
    }

    #[test]
    fn weighted_l1_is_mean_of_maxima() {
        let oracle = constant_oracle();
        let s = pts(&[0.2, 0.6]);
        let est = |s: &StateVec, a: usize| {
            let bump = if s[0] < 0.5 { 0.1 } else { 0.3 };
            Ok(oracle.eval(s, a)? + if a == 0 { bump } else { -bump / 2.0 })
        };
        let m = weighted_l1_error(est, &oracle, &s).unwrap();
        assert!((m.value - 0.2).abs() < 1e-12);
        assert!(weighted_l1_error(est, &oracle, &pts(&[3.0])).is_err());
    }

    #[test]
    fn identity_chain_samples_stay_put() {
        let env = ConstantEnv::new(1, vec![1.0, 1.0], 0.0).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let xs = stationary_samples(&env, &policy, 10, 20, 3, &mut seeded_rng(1, 0)).unwrap();
        assert!(xs.iter().all(|s| s[0] == 0.5));
    }

    #[test]
    fn samples_are_deterministic_and_burn_in_stable() {
        let env = Ar1Env::new(1, 0.0).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let a = stationary_samples(&env, &policy, 100, 50, 5, &mut seeded_rng(4, 0)).unwrap();
        let b = stationary_samples(&env, &policy, 100, 50, 5, &mut seeded_rng(4, 0)).unwrap();
        assert_eq!(a, b);
        let diag = burn_in_diagnostic(&env, &policy, 500, 2000, 10, &mut seeded_rng(5, 0)).unwrap();
        assert!(diag.z_score() < 4.0, "{diag:?}");
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(query_grid(&[0.0], &[1.0], 500).len(), 500);
        assert_eq!(query_grid(&[0.0, 0.0], &[1.0, 1.0], 1000).len(), 32 * 32);
        let g = query_grid(&[0.0], &[1.0], 4);
        assert_eq!(g[0][0], 0.125);
    }
}
