//! Command-line driver and file formats for NIT estimation and simulation
//! studies.
pub mod app;
mod checks;
pub mod io;

pub use checks::{oracle_check, CheckLine, Report};
