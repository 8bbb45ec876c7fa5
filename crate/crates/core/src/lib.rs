//! Default-aware Bayesian optimization with acquisition-gap pruning.
//!
//! The crate provides the usual BO building blocks (box search spaces, ARD
//! kernels with shrinkage priors, an ensemble MAP GP surrogate, EI/LogEI/UCB
//! acquisitions, multi-start acquisition maximization) plus a pruning policy
//! that resets low-impact components of each suggested configuration back to
//! a user-supplied default while keeping the loss in acquisition value below
//! a relative threshold. A small benchmark harness reproduces the
//! sparsity/performance trade-off measurements on embedded synthetic
//! problems.

pub mod acquisition;
pub mod bench;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod lbfgs;
pub mod optimizer;
pub mod pruning;
pub mod seeding;
pub mod sobol;
pub mod space;
pub mod verify;

pub use acquisition::{ucb_beta, AcqKind, AcqState, Acquisition};
pub use error::{Error, Result};
pub use gp::{fit_ensemble, fit_map, Dataset, EnsembleGP, GPMember};
pub use kernel::{KernelFamily, KernelParams, NoiseModel, SaasPriors};
pub use optimizer::{maximize_acq, OptBudget};
pub use pruning::{
    exact_prune, greedy_prune, prune_batch, record_accuracy, AccuracyLedger, GapRule, PruneTrace,
};
pub use space::{active_set, l0_distance, project, ActiveSet, Configuration, SearchSpace};
