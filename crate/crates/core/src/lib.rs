//! Clustering by assignment over a bank of learned nonlinear transforms.
//!
//! A shared linear map `A` projects each sample, `q = A x`. Every pair of a
//! dissimilarity vector `τ` and a similarity vector `ν` defines a candidate
//! transform whose output is a sparse representation `y`. A sample is
//! assigned to the candidate whose representation overlaps least with its
//! `τ` relative to its overlap with `ν`, and the parameters are refit by
//! alternating minimization.

pub mod assignment;
pub mod data_io;
pub mod error;
pub mod learning;
pub mod measures;
pub mod metrics;
pub mod par;

pub use assignment::{assign_batch, assign_batch_with, assign_sample, solve_candidate, Assignment};
pub use error::{Error, Result};
pub use learning::{fit, init_model, FitReport, FitResult, HyperParams, TransformModel};
pub use measures::{DiscriminationParams, ObjectiveBreakdown};
pub use metrics::Partition;
pub use par::Execution;
