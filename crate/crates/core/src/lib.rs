//! Nonparametric integrative Tweedie (NIT) estimation of normal means with
//! auxiliary information.

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
mod linalg;
pub mod metric_kernel;
pub mod oracle;
pub mod risk;
pub mod score_qp;
pub mod seeding;
pub mod sim;

pub use data::{AuxData, ColumnKind, DataMatrix, Dataset};
pub use error::{NitError, Result};
