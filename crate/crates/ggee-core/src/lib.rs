//! Grouped GEE estimation for longitudinal data.
//!
//! Subjects are partitioned into `G` latent groups, each with its own
//! regression coefficient vector, and the partition and the coefficients are
//! estimated jointly: a per-group GEE solve alternates with a Mahalanobis-type
//! reassignment of subjects, both under a user-chosen working correlation.
//! The number of groups can be selected by a clustering-instability
//! cross-validation criterion, and a simulation module provides correlated
//! binary data generators and the usual loss/error metrics.
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI, and parallel
//! simulation drivers live in the companion `ggee-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corr;
pub mod data;
pub mod error;
pub mod family;
pub mod grouping;
pub mod normal;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod solver;

pub use corr::{CorrStructure, MomentMatrix, WorkingCorrelationSpec};
pub use data::{LongitudinalDataset, Subject};
pub use error::{Error, Result};
pub use family::{Family, FamilySpec, SubjectMatrices};
pub use grouping::{FitOptions, GroupedFit, InitStrategy};
pub use selection::{CvaOptions, CvaResult};
pub use solver::{GroupFit, SolverOptions};
