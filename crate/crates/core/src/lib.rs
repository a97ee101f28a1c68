//! Nearest-neighbour Q-learning for continuous-state Markov decision
//! processes.
//!
//! The crate estimates `Q*(s, a)` from a single trajectory of a fixed
//! behaviour policy:
//!
//! * [`offline`] iterates the kNN Bellman operator on a complete trajectory
//!   until it reaches its fixed point;
//! * [`online`] runs one update per incoming step over a sliding window
//!   `[⌈βt⌉, t)` with a growing neighbour count;
//! * [`oracle`] solves the Bellman equation on a fine grid for the built-in
//!   environments, providing ground truth;
//! * [`harness`] measures errors, fits convergence rates and runs sweeps.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled as doctests of this crate.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod knn;
pub mod mdp;
pub mod norm;
pub mod offline;
pub mod online;
pub mod oracle;
mod rng;

pub use error::{Error, Result};
pub use norm::Norm;
pub use rng::seeded_rng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/neighbors.md")]
    mod neighbors {}
    #[doc = include_str!("../../../book/src/offline.md")]
    mod offline {}
    #[doc = include_str!("../../../book/src/online.md")]
    mod online {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
