//! Linear state-space identification: least-squares FIR (Markov parameter)
//! estimation followed by a Ho-Kalman realization.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, lstsq_min_norm, svd, Mat};
use crate::model::LinearSS;

/// Relative singular-value threshold for the FIR regressor.
const REGRESSOR_RCOND: f64 = 1e-10;
/// Relative singular-value threshold defining the Hankel numerical rank.
const HANKEL_RANK_TOL: f64 = 1e-10;

/// FIR horizon used when none is given: `max(20, 5n)`.
pub fn default_horizon(order: usize) -> usize {
    (5 * order).max(20)
}

/// Least-squares estimate of `G_1..G_L` in `y(k) ≈ Σ_i G_i u(k−i)`.
///
/// Inputs before the first sample are taken as zero and there is no direct
/// feedthrough (`G_0 = 0`).
pub fn estimate_markov(ds: &Dataset, horizon: usize) -> Result<Vec<Mat>> {
    let (n_samples, m, p) = (ds.len(), ds.input_dim(), ds.output_dim());
    if horizon == 0 {
        return Err(Error::InvalidArgument("FIR horizon must be positive".into()));
    }
    if n_samples <= horizon * m + 10 {
        return Err(Error::InvalidArgument(format!(
            "{n_samples} samples are too few for horizon {horizon} with {m} inputs (need > {})",
            horizon * m + 10
        )));
    }
    let u = ds.inputs();
    let rows = n_samples - 1;
    let phi = Mat::from_fn(rows, horizon * m, |r, col| {
        let k = r + 1;
        let (lag, ch) = (col / m + 1, col % m);
        if k >= lag {
            u[(ch, k - lag)]
        } else {
            0.0
        }
    });
    let target = Mat::from_fn(rows, p, |r, ch| ds.outputs()[(ch, r + 1)]);
    let theta = lstsq(&phi, &target, REGRESSOR_RCOND)?;
    Ok((0..horizon)
        .map(|i| theta.rows(i * m, m).transpose())
        .collect())
}

/// Markov parameters `G_1..G_L` of an ARX model of order `order` fitted by least squares:
/// `y(k) = Σ_{i=1}^{order} A_i y(k−i) + B_i u(k−i)`, rows `k ≥ order` only.
///
/// Output lags make the regressor well conditioned under narrow-band inputs
/// where the pure FIR regression is rank deficient. Input directions the data
/// cannot separate are resolved by the minimum-norm solution.
pub fn estimate_markov_arx(ds: &Dataset, order: usize, horizon: usize) -> Result<Vec<Mat>> {
    let (n_samples, m, p) = (ds.len(), ds.input_dim(), ds.output_dim());
    if order == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("ARX order and horizon must be positive".into()));
    }
    let cols = order * (p + m);
    if n_samples <= order + cols + 10 {
        return Err(Error::InvalidArgument(format!(
            "{n_samples} samples are too few for an ARX model with {cols} coefficients"
        )));
    }
    let (u, y) = (ds.inputs(), ds.outputs());
    let rows = n_samples - order;
    let phi = Mat::from_fn(rows, cols, |r, col| {
        let k = r + order;
        let (lag, off) = (col / (p + m) + 1, col % (p + m));
        if off < p {
            y[(off, k - lag)]
        } else {
            u[(off - p, k - lag)]
        }
    });
    let target = Mat::from_fn(rows, p, |r, ch| y[(ch, r + order)]);
    let (theta, _) = lstsq_min_norm(&phi, &target, REGRESSOR_RCOND)?;
    let a: Vec<Mat> = (0..order).map(|i| theta.rows(i * (p + m), p).transpose()).collect();
    let b: Vec<Mat> = (0..order).map(|i| theta.rows(i * (p + m) + p, m).transpose()).collect();
    let mut g: Vec<Mat> = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        let mut gk = if k <= order { b[k - 1].clone() } else { Mat::zeros(p, m) };
        for i in 1..k.min(order + 1) {
            gk += &a[i - 1] * &g[k - i - 1];
        }
        g.push(gk);
    }
    Ok(g)
}

/// Source of the Markov parameters used by [`linear_init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MarkovSource {
    Fir,
    Arx,
}

/// Result of a Ho-Kalman realization, keeping the Hankel spectrum for diagnosis.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub system: LinearSS,
    pub singular_values: Vec<f64>,
    pub source: MarkovSource,
}

/// Balanced realization of order `order` from Markov parameters `G_1..G_L`.
///
/// The block Hankel matrix uses `⌊L/2⌋` block rows and columns.
pub fn ho_kalman(markov: &[Mat], order: usize) -> Result<Realization> {
    if order == 0 {
        return Err(Error::InvalidArgument("model order must be positive".into()));
    }
    let len = markov.len();
    let blocks = len / 2;
    if blocks == 0 {
        return Err(Error::InvalidArgument("need at least two Markov parameters".into()));
    }
    let (p, m) = markov[0].shape();
    if markov.iter().any(|g| g.shape() != (p, m)) {
        return Err(Error::Dimension("Markov parameters have inconsistent shapes".into()));
    }
    let hankel = |shift: usize| {
        let mut h = Mat::zeros(blocks * p, blocks * m);
        for i in 0..blocks {
            for j in 0..blocks {
                h.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i + j + shift]);
            }
        }
        h
    };
    let h0 = hankel(0);
    let h1 = hankel(1);
    let d = svd(&h0);
    let sv = d.s;
    let s_max = sv.first().copied().unwrap_or(0.0);
    let rank = if s_max > 0.0 { sv.iter().filter(|&&s| s > HANKEL_RANK_TOL * s_max).count() } else { 0 };
    if order > rank {
        return Err(Error::OrderExceedsRank { requested: order, rank, singular_values: sv });
    }
    let un = d.u.columns(0, order).into_owned();
    let vn = d.v.columns(0, order).into_owned();
    let sqrt_s: Vec<f64> = sv.iter().take(order).map(|&s| libm::sqrt(s)).collect();
    let inv_sqrt = Mat::from_diagonal(&nalgebra::DVector::from_iterator(order, sqrt_s.iter().map(|s| 1.0 / s)));
    let sqrt_d = Mat::from_diagonal(&nalgebra::DVector::from_vec(sqrt_s));
    let obs = &un * &sqrt_d;
    let ctrb = &sqrt_d * vn.transpose();
    let a = &inv_sqrt * un.transpose() * &h1 * &vn * &inv_sqrt;
    let b = ctrb.columns(0, m).into_owned();
    let c = obs.rows(0, p).into_owned();
    Ok(Realization { system: LinearSS::new(a, b, c)?, singular_values: sv, source: MarkovSource::Fir })
}

/// Linear initialization `(A₀, B₀, C₀)`; also the LTI baseline model.
pub fn linear_init(ds: &Dataset, order: usize, horizon: usize) -> Result<LinearSS> {
    linear_init_report(ds, order, horizon).map(|r| r.system)
}

/// FIR Markov estimate and Ho-Kalman realization. When the FIR regressor is
/// rank deficient the Markov parameters come from an ARX model of the same
/// order instead; [`Realization::source`] records which.
pub fn linear_init_report(ds: &Dataset, order: usize, horizon: usize) -> Result<Realization> {
    if order == 0 {
        return Err(Error::InvalidArgument("model order must be positive".into()));
    }
    match estimate_markov(ds, horizon) {
        Ok(markov) => ho_kalman(&markov, order),
        Err(Error::RankDeficient { .. }) => {
            let markov = estimate_markov_arx(ds, order, horizon)?;
            let mut r = ho_kalman(&markov, order)?;
            r.source = MarkovSource::Arx;
            Ok(r)
        }
        Err(e) => Err(e),
    }
}
