//! File formats, reports and run files for AL-SSNN identification, built on
//! [`alssnn_core`]. The `alssnn` binary is a thin layer over this crate.

pub mod analysis;
pub mod csvio;
pub mod error;
pub mod generate;
pub mod jsonio;
pub mod modelio;
pub mod pipeline;
pub mod report;

pub use error::{AppError, AppResult, ExitKind};
