//! Sampled input/output records, contiguous train/test splitting and summary statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Input/output record of `N` samples.
///
/// Signals are stored channel-major: `u` is `m × N` and `y` is `p × N`, so
/// `u.column(k)` is the input vector at sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dt: f64,
    u: Mat,
    y: Mat,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dt: f64, u: Mat, y: Mat) -> Result<Self> {
        let n = u.ncols();
        if y.ncols() != n {
            return Err(Error::InvalidDataset(format!(
                "input has {} samples but output has {}",
                n,
                y.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 samples, got {n}")));
        }
        if u.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::InvalidDataset("input and output dimensions must be >= 1".into()));
        }
        if let Some(k) = first_non_finite(&u).or_else(|| first_non_finite(&y)) {
            return Err(Error::InvalidDataset(format!("non-finite value at sample {k}")));
        }
        if !dt.is_finite() {
            return Err(Error::InvalidDataset("sample period must be finite".into()));
        }
        Ok(Self { name: name.into(), dt, u, y })
    }

    /// Builds a dataset from per-sample vectors.
    pub fn from_samples(
        name: impl Into<String>,
        dt: f64,
        u: &[Vec<f64>],
        y: &[Vec<f64>],
    ) -> Result<Self> {
        let m = u.first().map_or(0, Vec::len);
        let p = y.first().map_or(0, Vec::len);
        if let Some(k) = u.iter().position(|r| r.len() != m) {
            return Err(Error::InvalidDataset(format!("input sample {k} has wrong dimension")));
        }
        if let Some(k) = y.iter().position(|r| r.len() != p) {
            return Err(Error::InvalidDataset(format!("output sample {k} has wrong dimension")));
        }
        let um = Mat::from_fn(m, u.len(), |i, k| u[k][i]);
        let ym = Mat::from_fn(p, y.len(), |i, k| y[k][i]);
        Self::new(name, dt, um, ym)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.y.nrows()
    }

    /// Inputs, `m × N`.
    pub fn inputs(&self) -> &Mat {
        &self.u
    }

    /// Outputs, `p × N`.
    pub fn outputs(&self) -> &Mat {
        &self.y
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Contiguous sub-record `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start >= end {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.len()
            )));
        }
        Self::new(
            self.name.clone(),
            self.dt,
            self.u.columns(start, end - start).into_owned(),
            self.y.columns(start, end - start).into_owned(),
        )
    }

    /// Concatenates two records with matching dimensions, keeping this name and period.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.input_dim() != other.input_dim() || self.output_dim() != other.output_dim() {
            return Err(Error::Dimension("cannot concatenate datasets of different dimensions".into()));
        }
        let n = self.len() + other.len();
        let mut u = Mat::zeros(self.input_dim(), n);
        let mut y = Mat::zeros(self.output_dim(), n);
        u.columns_mut(0, self.len()).copy_from(&self.u);
        u.columns_mut(self.len(), other.len()).copy_from(&other.u);
        y.columns_mut(0, self.len()).copy_from(&self.y);
        y.columns_mut(self.len(), other.len()).copy_from(&other.y);
        Self::new(self.name.clone(), self.dt, u, y)
    }

    /// Root-mean-square of the output over all samples and channels.
    pub fn output_rms(&self) -> f64 {
        let ss: f64 = self.y.iter().fold(0.0, |a, v| a + v * v);
        libm::sqrt(ss / self.len() as f64)
    }
}

fn first_non_finite(m: &Mat) -> Option<usize> {
    (0..m.ncols()).find(|&k| m.column(k).iter().any(|v| !v.is_finite()))
}

/// Fraction of the record assigned to the training prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(Self { train_fraction })
    }

    /// `floor(N · train_fraction)`.
    pub fn split_index(&self, n: usize) -> usize {
        libm::floor(n as f64 * self.train_fraction) as usize
    }
}

/// Splits into a contiguous training prefix and the remaining test suffix.
///
/// Both halves must keep at least two samples.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let spec = SplitSpec::new(spec.train_fraction)?;
    let n = ds.len();
    let cut = spec.split_index(n);
    if cut < 2 || n - cut < 2 {
        return Err(Error::InvalidArgument(format!(
            "degenerate split of {n} samples at {cut}: each side needs at least 2"
        )));
    }
    Ok((ds.slice(0, cut)?, ds.slice(cut, n)?))
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn channel_stats(signal: &Mat) -> ChannelStats {
    let n = signal.ncols() as f64;
    let mut stats = ChannelStats { mean: Vec::new(), std: Vec::new(), min: Vec::new(), max: Vec::new() };
    for row in signal.row_iter() {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        stats.mean.push(mean);
        stats.std.push(libm::sqrt(var));
        stats.min.push(row.iter().copied().fold(f64::INFINITY, f64::min));
        stats.max.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    stats
}

/// Per-channel affine map `z' = (z − offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScaling {
    pub u_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub y_offset: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl AffineScaling {
    /// Standardizes every channel to zero mean and unit variance on `ds`.
    pub fn standardize(ds: &Dataset) -> Self {
        let su = channel_stats(ds.inputs());
        let sy = channel_stats(ds.outputs());
        let guard = |s: Vec<f64>| s.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect();
        Self { u_offset: su.mean, u_scale: guard(su.std), y_offset: sy.mean, y_scale: guard(sy.std) }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let u = Mat::from_fn(ds.input_dim(), ds.len(), |i, k| {
            (ds.inputs()[(i, k)] - self.u_offset[i]) / self.u_scale[i]
        });
        let y = Mat::from_fn(ds.output_dim(), ds.len(), |i, k| {
            (ds.outputs()[(i, k)] - self.y_offset[i]) / self.y_scale[i]
        });
        Dataset::new(ds.name(), ds.dt(), u, y)
    }

    /// Maps model-unit outputs (`p × K`) back to data units.
    pub fn restore_outputs(&self, y: &Mat) -> Result<Mat> {
        if y.nrows() != self.y_scale.len() || y.nrows() != self.y_offset.len() {
            return Err(Error::Dimension("scaling does not match output dimension".into()));
        }
        Ok(Mat::from_fn(y.nrows(), y.ncols(), |i, k| y[(i, k)] * self.y_scale[i] + self.y_offset[i]))
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if self.u_offset.len() != ds.input_dim()
            || self.u_scale.len() != ds.input_dim()
            || self.y_offset.len() != ds.output_dim()
            || self.y_scale.len() != ds.output_dim()
        {
            return Err(Error::Dimension("scaling does not match dataset dimensions".into()));
        }
        Ok(())
    }
}
