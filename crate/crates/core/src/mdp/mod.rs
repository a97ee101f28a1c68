//! States, trajectories, environments and behaviour policies.

mod builtin;
pub mod config;
mod env;
mod policy;
mod state;
mod trajectory;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

pub use builtin::{Ar1Env, BoxEnv, ConstantEnv};
pub use env::{
    kernel_density, kernel_density_lipschitz, EnvConstants, Environment, KernelForm, NoiseModel, Support, TruncationBox,
};
pub use policy::{sample_action, Policy};
pub use state::StateVec;
pub use trajectory::{StepRecord, StepStream, Trajectory};

use crate::error::{Error, Result};

/// One environment step: `R = r(s,a) + W` and `S' ~ p(·|s,a)`.
///
/// Noise is only drawn when `σ > 0`, so noise-free environments return
/// `r(s,a)` exactly.
pub fn step_env<R: Rng>(env: &dyn Environment, s: &StateVec, a: usize, rng: &mut R) -> Result<(f64, StateVec)> {
    s.check_dim(env.dim())?;
    if a >= env.num_actions() {
        return Err(Error::invalid(format!("action {a} out of range for {} actions", env.num_actions())));
    }
    let noise = env.noise();
    let mut w = 0.0;
    if noise.sigma > 0.0 {
        w = Normal::new(0.0, noise.sigma).expect("sigma validated at construction").sample(rng);
        if let Some(c) = noise.clip {
            w = w.clamp(-c, c);
        }
    }
    let reward = env.mean_reward(s, a) + w;
    let next = env.sample_next(s, a, rng as &mut dyn RngCore);
    Ok((reward, StateVec::new(next)?))
}

/// Rolls out `steps` transitions from `s0` under `policy`.
pub fn sample_trajectory<R: Rng>(
    env: &dyn Environment,
    policy: &Policy,
    steps: usize,
    s0: StateVec,
    rng: &mut R,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::invalid("trajectory length must be >= 1"));
    }
    if policy.dim() != env.dim() || policy.num_actions() != env.num_actions() {
        return Err(Error::invalid(format!(
            "policy shape ({}, {}) does not match environment ({}, {})",
            policy.dim(),
            policy.num_actions(),
            env.dim(),
            env.num_actions()
        )));
    }
    s0.check_dim(env.dim())?;
    let mut records = Vec::with_capacity(steps);
    let mut s = s0;
    for t in 1..=steps {
        let a = sample_action(policy, &s, rng)?;
        let (r, next) = step_env(env, &s, a, rng)?;
        records.push(StepRecord { t, state: s, action: a, reward: r });
        s = next;
    }
    Trajectory::new(env.dim(), env.num_actions(), records, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(v: &[f64]) -> StateVec {
        StateVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn noise_free_constant_step() {
        let env = ConstantEnv::new(1, vec![1.0, 1.0], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (r, next) = step_env(&env, &sv(&[0.42]), 1, &mut rng).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(next, sv(&[0.42]));
    }

    #[test]
    fn invalid_action_rejected() {
        let env = BoxEnv::new(1, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(step_env(&env, &sv(&[0.5]), 2, &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reward_noise_has_zero_mean() {
        // Monte-Carlo oracle: the sample mean of n draws sits within 4σ/√n
        let sigma = 0.1;
        let env = BoxEnv::new(1, sigma).unwrap();
        let s = sv(&[0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| step_env(&env, &s, 0, &mut rng).unwrap().0).sum::<f64>() / n as f64;
        let r = env.mean_reward(&s, 0);
        assert!((mean - r).abs() <= 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn box_env_stays_in_box() {
        let env = BoxEnv::new(1, 0.1).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = sample_trajectory(&env, &policy, 1_000_000, sv(&[0.5]), &mut rng).unwrap();
        assert!(traj.steps().iter().all(|s| (0.0..=1.0).contains(&s.state[0])));
        assert!((0.0..=1.0).contains(&traj.terminal_state()[0]));
    }

    #[test]
    fn identity_transition_keeps_state() {
        let env = ConstantEnv::new(1, vec![1.0, 0.5], 0.2).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let traj = sample_trajectory(&env, &policy, 50, sv(&[0.3]), &mut rng).unwrap();
        assert!(traj.steps().iter().all(|s| s.state == sv(&[0.3])));
        assert_eq!(traj.terminal_state(), &sv(&[0.3]));
    }

    #[test]
    fn indexing_contract() {
        let env = BoxEnv::new(1, 0.1).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let traj = sample_trajectory(&env, &policy, 5, sv(&[0.5]), &mut rng).unwrap();
        let ts: Vec<usize> = traj.steps().iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![1, 2, 3, 4, 5]);
        assert_eq!(traj.state(6), traj.terminal_state());
        assert!(sample_trajectory(&env, &policy, 0, sv(&[0.5]), &mut rng).is_err());
    }

    #[test]
    fn both_actions_occur() {
        // P(one action missing in 1000 fair draws) = 2·2^-1000
        let env = BoxEnv::new(1, 0.1).unwrap();
        let policy = Policy::uniform(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let traj = sample_trajectory(&env, &policy, 1000, sv(&[0.5]), &mut rng).unwrap();
        let ones = traj.steps().iter().filter(|s| s.action == 1).count();
        assert!(ones > 0 && ones < 1000);
    }

    #[test]
    fn csv_round_trip_and_stream() {
        let env = Ar1Env::new(2, 0.1).unwrap();
        let policy = Policy::uniform(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = sample_trajectory(&env, &policy, 30, env.initial_state(), &mut rng).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,s0,s1,a,r\n"));
        assert!(text.trim_end().ends_with(",,"));
        let back = Trajectory::read_csv(buf.as_slice(), Some(2)).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn malformed_csv_rejected() {
        let missing_terminal = "t,s0,a,r\n1,0.5,0,1\n";
        assert!(Trajectory::read_csv(missing_terminal.as_bytes(), None).is_err());
        let gap = "t,s0,a,r\n1,0.5,0,1\n3,0.5,,\n";
        assert!(Trajectory::read_csv(gap.as_bytes(), None).is_err());
        let header = "t,x,a,r\n1,0.5,0,1\n2,0.5,,\n";
        assert!(Trajectory::read_csv(header.as_bytes(), None).is_err());
    }
}
