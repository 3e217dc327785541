//! Identification of approximately feedback-linearizable neural state-space
//! models (AL-SSNN) from input/output data.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the model
//! families, linear initialization, simulation-error training with a
//! residual-nonlinearity penalty, the output-feedback linearizing law and
//! quadratic ISS certificates. File formats and the command-line tool live in
//! the `alssnn` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod benchgen;
pub mod control;
pub mod data;
pub mod error;
pub mod iss;
pub mod linalg;
pub mod mlp;
pub mod model;
pub mod sysid;
pub mod training;

pub use data::{split, Dataset, SplitSpec};
pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use mlp::{Activation, Equilibrium, Mlp, MlpDims};
pub use model::{simulate, AlSsnnModel, GrSsnnModel, LinearSS, Model, StateSpaceModel, Trajectory};
