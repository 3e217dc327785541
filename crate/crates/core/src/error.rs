use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the identification, analysis and certification routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regressor is rank deficient (condition {condition:.3e}); use a longer record or a smaller horizon")]
    RankDeficient { condition: f64 },

    #[error("requested order {requested} exceeds numerical rank {rank}; singular values: {singular_values:?}")]
    OrderExceedsRank {
        requested: usize,
        rank: usize,
        singular_values: Vec<f64>,
    },

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("open-loop linear part not Schur stable (spectral radius {spectral_radius:.6}); no quadratic ISS certificate of this form exists")]
    NotSchurStable { spectral_radius: f64 },

    #[error("no feasible certificate on the search grid; least violating candidate phi={phi:.3e} psi={psi:.3e} lmi_max_eig={lmi_max_eig:.3e} p_min_eig={p_min_eig:.3e}")]
    Infeasible {
        phi: f64,
        psi: f64,
        lmi_max_eig: f64,
        p_min_eig: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
