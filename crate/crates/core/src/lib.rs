//! Doubly-robust advantage learning for offline, infinite-horizon RL.
//!
//! The pipeline splits logged trajectories into folds, fits an initial
//! Q-estimator and a discounted-visitation density ratio on each fold's
//! complement, builds cross-fitted doubly-robust pseudo-outcomes for the
//! optimal contrast `tau(a, s) = Q*(a, s) - Q*(a0, s)`, regresses them per
//! action, and acts greedily on the fitted contrast. Every statistical step can
//! be checked against the exact tabular computations in [`oracle`].

// index loops mirror the math; `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod approximator;
pub mod cli;
pub mod domain;
pub mod envs;
pub mod error;
pub mod ope;
pub mod oracle;
pub mod pseudo;
pub mod qlearn;
pub mod ratio;
pub mod rng;

pub use domain::{
    greedy_policy, split_folds, validate_dataset, ActionId, Dataset, Discount, FoldAssignment,
    Policy, QFunction, StateVec, Step, Trajectory,
};
pub use error::{Error, Result};
