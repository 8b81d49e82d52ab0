//! Exact small-scale reference implementations.
//!
//! The learned components are validated against closed-form or enumerable
//! ground truth: finitely-supported return distributions with exact
//! Wasserstein distances ([`dist`]) and tabular MDPs with exact soft
//! policy evaluation, improvement, and distributional backups ([`tabular`]).

pub mod dist;
pub mod tabular;

pub use dist::EmpiricalDist;
pub use tabular::{
    apply_dsb, check_contraction, check_improvement, evaluate_policy_dist, mc_soft_return,
    random_dist_table, random_mdp, random_policy, soft_q_solve, soft_value, soft_value_iteration,
    softmax_policy, sup_wasserstein, uniform_policy, ContractionReport, DistTable,
    ImprovementReport, Policy, TabularMDP, ATOM_HARD_LIMIT,
};
