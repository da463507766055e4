//! Batch value prediction on tabular MDPs: batch TD(0) with policy sampling
//! error corrected weights, LSTD, certainty-equivalence oracles, spectral
//! checks and a reproducible experiment harness.

pub mod analysis;
mod dp;
pub mod empirical;
pub mod error;
pub mod experiment;
pub mod features;
pub mod gridworld;
pub mod learners;
pub mod lstd;
pub mod mdp;
pub mod metrics;
pub mod oracles;
pub mod sampling;
pub mod seed;
pub mod trajectory;

pub use analysis::{
    alpha_stability, alpha_stability_for, check_convergence_conditions, ConvergenceReport, IterationKind,
    StabilityReport,
};
pub use empirical::{estimate, matrix_form, unvisited_fraction, CEMatrixForm, EmpiricalModel};
pub use error::{Error, Result};
pub use features::FeatureMap;
pub use gridworld::{build_gridworld, study_policies, GridworldConfig, PolicyMode};
pub use learners::{
    eval_support_covered, fit_td0, psec_weight, Behavior, Decay, FitReport, InitWeights, LearnerConfig,
    ValueEstimate, WeightMode,
};
pub use lstd::{fit_lstd, LstdConfig, LstdMode};
pub use mdp::{softmax_policy, solve_true_values, validate_mdp, SoftmaxParams, TabularMDP, TabularPolicy, Violation};
pub use metrics::{aggregate_trials, msve, Aggregate, StateWeighting};
pub use oracles::{closed_form_values, solve_mdp_cee, solve_mrp_cee, solve_psec_cee, PolicySource};
pub use sampling::{sample_batch, sample_episode};
pub use seed::{hash64, trial_seed};
pub use trajectory::{Batch, Episode, Transition};
