//! IO, file formats, and simulation drivers around `ggee-core`.

pub mod csv_io;
pub mod error;
pub mod fit_json;
pub mod parse;
pub mod summarize;
pub mod tables;

pub use error::{CliError, CliResult};
