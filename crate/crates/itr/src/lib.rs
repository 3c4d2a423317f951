//! Individualized treatment rules from two randomized trials that share a
//! comparator arm.
//!
//! Three learners are provided: separate learning (`SepL`) per study via
//! doubly robust outcome-weighted learning, and two integrative learners that
//! borrow strength across studies — `IntLS` through pseudo-outcomes built from
//! the other study's rule, and `IntLF` which additionally fuses the two
//! decision functions through a surrogate-loss penalty over the other study's
//! covariates. A simulation engine generates synthetic two-study experiments
//! and aggregates RMSE/bias tables over replications.
//!
//! Replications, cross-validation folds, and grid points run in parallel with
//! rayon when the default `parallel` feature is enabled; disabling it yields a
//! fully sequential build with identical numerical results.

pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod learners;
pub mod nuisance;
pub mod sim;
pub mod surrogate;
pub mod tuning;
pub mod types;

pub use error::{Error, Result};
pub use types::{DecisionRule, KernelSpec, StudyPair, TrialDataset};
