//! Dynamic mode decomposition for gridded spatio-temporal series: exact DMD,
//! optimized DMD by variable projection with eigenvalue constraints, and
//! bagged ensembles of optimized fits for uncertainty estimates.
//!
//! Times are in days throughout, so continuous-time eigenvalues are in 1/day.

pub mod bopdmd;
pub mod error;
pub mod exactdmd;
pub mod gridstore;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optdmd;
pub mod preprocess;
pub mod synth;
pub mod varpro;

pub use error::{Error, Result};
pub use gridstore::{DataKind, GridMeta, SnapshotMatrix, SnapshotSet, TimeGrid};
pub use linalg::C64;
pub use model::{evaluate, relative_error, DmdModel};
pub use varpro::{EigConstraint, SolveInfo, VarProOptions};
