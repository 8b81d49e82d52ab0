//! Distributional soft actor-critic with risk-sensitive objectives.
//!
//! The crate is organized around a small set of modules:
//!
//! - [`neuro`]: tape-based reverse-mode autodiff, Adam, layer norm.
//! - [`fractions`]: quantile-fraction generators (fixed grid, random, learned
//!   proposal network) and the 1-Wasserstein fraction gradient.
//! - [`risk`]: expectation/value-at-risk/variance readouts and distorted
//!   expectations (CPW, Wang, CVaR) over quantile estimates.
//! - [`critic`]: fraction-conditioned quantile critics, the pairwise
//!   soft temporal-difference matrix, and the Huber quantile objective.
//! - [`actor`]: tanh-squashed Gaussian policy and its objective.
//! - [`agent`]: replay buffer, the full update rule, training/evaluation
//!   loops, metrics and checkpoints.
//! - [`envs`]: pendulum swing-up, a risk-sensitive path task, a tabular
//!   chain, and the generic tabular MDP those tasks reduce to.
//! - [`oracle`]: exact distributional Bellman machinery on tabular MDPs used
//!   to verify contraction, convergence and policy-improvement claims.
//! - [`cli`]: the `dsac` command-line front end.

pub mod actor;
pub mod agent;
pub mod cli;
pub mod critic;
pub mod envs;
pub mod error;
pub mod fractions;
pub mod neuro;
pub mod oracle;
pub mod risk;

pub use error::{Error, Result};
