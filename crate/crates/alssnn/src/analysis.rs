//! Identification, evaluation, closed-loop analysis and certification on a
//! train/test split, shared by the command-line tool and the run files.

use alssnn_core::control::{estimate_epsilon, ratio_stats_on, simulate_closed_loop, ClosedLoopRecord, RatioStats, RatioSummary};
use alssnn_core::data::AffineScaling;
use alssnn_core::iss::{check_convergence, solve_certificate, verify, ConvergenceReport, IssCertificate, SearchConfig, Verification};
use alssnn_core::linalg::spectral_radius;
use alssnn_core::sysid::{default_horizon, linear_init_report, MarkovSource};
use alssnn_core::training::{train_gr_observed, train_observed, TrainConfig, TrainObserver, TrainReport};
use alssnn_core::{simulate, split, AlSsnnModel, Dataset, Mat, Model, SplitSpec, StateSpaceModel, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Model family selected on the command line or in a run file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Lti,
    GrSsnn,
    AlSsnn,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Lti => "lti",
            Family::GrSsnn => "gr-ssnn",
            Family::AlSsnn => "al-ssnn",
        }
    }
}

/// A record cut into a training prefix and a test remainder, both in model units.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub scaling: Option<AffineScaling>,
    pub train_fraction: f64,
}

impl Split {
    /// Splits `ds` and, when `normalize`, standardizes both parts with training statistics.
    pub fn new(ds: &Dataset, train_fraction: f64, normalize: bool) -> AppResult<Self> {
        let (train, _) = split(ds, SplitSpec::new(train_fraction)?)?;
        let scaling = normalize.then(|| AffineScaling::standardize(&train));
        Self::with_scaling(ds, train_fraction, scaling)
    }

    /// Splits `ds` and applies a given scaling.
    pub fn with_scaling(ds: &Dataset, train_fraction: f64, scaling: Option<AffineScaling>) -> AppResult<Self> {
        let (train, test) = split(ds, SplitSpec::new(train_fraction)?)?;
        let (train, test) = match &scaling {
            Some(s) => (s.apply(&train)?, s.apply(&test)?),
            None => (train, test),
        };
        Ok(Self { train, test, scaling, train_fraction })
    }

    pub fn full(&self) -> AppResult<Dataset> {
        Ok(self.train.concat(&self.test)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    pub family: Family,
    pub order: usize,
    /// Width of `f_n` for GR-SSNN.
    pub n_f: usize,
    pub config: TrainConfig,
}

/// Linear initialization details for LTI models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiInfo {
    pub horizon: usize,
    pub hankel_singular_values: Vec<f64>,
    pub markov_source: MarkovSource,
}

#[derive(Debug, Clone)]
pub struct Identified {
    pub model: Model,
    pub training: Option<TrainReport>,
    pub lti: Option<LtiInfo>,
}

pub fn identify(split: &Split, opts: &IdentifyOptions, observer: &mut dyn TrainObserver) -> AppResult<Identified> {
    let ds = &split.train;
    match opts.family {
        Family::Lti => {
            let horizon = opts.config.horizon.unwrap_or_else(|| default_horizon(opts.order));
            let init = linear_init_report(ds, opts.order, horizon)?;
            Ok(Identified {
                model: Model::Lti(init.system),
                training: None,
                lti: Some(LtiInfo { horizon, hankel_singular_values: init.singular_values, markov_source: init.source }),
            })
        }
        Family::GrSsnn => {
            let (m, rep) = train_gr_observed(ds, opts.order, opts.n_f, &opts.config, observer)?;
            Ok(Identified { model: Model::Gr(m), training: Some(rep), lti: None })
        }
        Family::AlSsnn => {
            let (m, rep) = train_observed(ds, opts.order, &opts.config, observer)?;
            Ok(Identified { model: Model::Al(m), training: Some(rep), lti: None })
        }
    }
}

/// Free-run metrics. The test RMSE continues the training run into the test
/// samples; `rmse_test_reset` restarts from `x = 0` at the first test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub rmse_train: f64,
    pub rmse_test: f64,
    pub rmse_test_reset: f64,
    /// The same three errors mapped back to data units when the model was trained on scaled data.
    pub rmse_data_units: Option<[f64; 3]>,
    pub ratios_train: Option<RatioStats>,
    pub ratios_test: Option<RatioStats>,
}

fn sq_err(meas: &Mat, pred: &Mat, scale: Option<&[f64]>) -> f64 {
    let mut acc = 0.0;
    for k in 0..meas.ncols() {
        for i in 0..meas.nrows() {
            let w = scale.map_or(1.0, |s| s[i]);
            let e = (meas[(i, k)] - pred[(i, k)]) * w;
            acc += e * e;
        }
    }
    acc
}

/// Evaluates `model` on a split from initial state `x0` (zero when `None`).
pub fn evaluate(model: &Model, split: &Split, x0: Option<&Vector>) -> AppResult<EvalMetrics> {
    let n = model.state_dim();
    let zero = Vector::zeros(n);
    let x0 = x0.unwrap_or(&zero);
    if x0.len() != n {
        return Err(AppError::Usage(format!("initial state has length {}, model order is {n}", x0.len())));
    }
    let full = split.full()?;
    if full.input_dim() != model.input_dim() || full.output_dim() != model.output_dim() {
        return Err(AppError::Data(format!(
            "dataset has (m, p) = ({}, {}), model expects ({}, {})",
            full.input_dim(),
            full.output_dim(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    let (nt, ne) = (split.train.len(), split.test.len());
    let run = simulate(model, full.inputs(), x0)?.require_finite()?;
    let reset = simulate(model, split.test.inputs(), x0)?.require_finite()?;
    let y = full.outputs();
    let parts = |scale: Option<&[f64]>| {
        let train = sq_err(&y.columns(0, nt).into_owned(), &run.y.columns(0, nt).into_owned(), scale);
        let test = sq_err(&y.columns(nt, ne).into_owned(), &run.y.columns(nt, ne).into_owned(), scale);
        let test_reset = sq_err(split.test.outputs(), &reset.y, scale);
        [(train / nt as f64).sqrt(), (test / ne as f64).sqrt(), (test_reset / ne as f64).sqrt()]
    };
    let [rmse_train, rmse_test, rmse_test_reset] = parts(None);
    let rmse_data_units = split.scaling.as_ref().map(|s| parts(Some(&s.y_scale)));
    let (ratios_train, ratios_test) = match model {
        Model::Lti(_) => (None, None),
        _ => (
            Some(ratio_stats_on(model, &run.x.columns(0, nt + 1).into_owned(), split.train.inputs())?),
            Some(ratio_stats_on(model, &run.x.columns(nt, ne + 1).into_owned(), split.test.inputs())?),
        ),
    };
    Ok(EvalMetrics { rmse_train, rmse_test, rmse_test_reset, rmse_data_units, ratios_train, ratios_test })
}

/// Mean and maximum of a norm sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSummary {
    pub max: f64,
    pub mean: f64,
}

impl NormSummary {
    pub fn of(v: &[f64]) -> Self {
        let max = v.iter().copied().fold(0.0, f64::max);
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self { max, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub steps: usize,
    pub linear_norm: NormSummary,
    pub omega_norm: NormSummary,
    /// `‖ω‖ / ‖Ax+Bv‖`
    pub ratio: Option<RatioSummary>,
    pub excluded: usize,
    /// Data-driven bound on `‖ω‖` over the open-loop runs and this record.
    pub epsilon: f64,
    pub diverged_at: Option<usize>,
}

pub fn require_al(model: &Model) -> AppResult<&AlSsnnModel> {
    match model {
        Model::Al(m) => Ok(m),
        other => Err(AppError::Data(format!(
            "closed loop and certification need an al-ssnn model, got {}",
            other.family()
        ))),
    }
}

/// Runs the linearized loop with `v` equal to the recorded input of the whole record.
pub fn closed_loop(model: &AlSsnnModel, split: &Split) -> AppResult<(ClosedLoopRecord, ClosedLoopSummary)> {
    let full = split.full()?;
    let rec = simulate_closed_loop(model, full.inputs(), &Vector::zeros(model.n()))?;
    let epsilon = estimate_epsilon(model, &[&split.train, &split.test], &[&rec])?;
    let summary = ClosedLoopSummary {
        steps: rec.len(),
        linear_norm: NormSummary::of(&rec.linear_norm),
        omega_norm: NormSummary::of(&rec.omega_norm),
        ratio: rec.ratio,
        excluded: rec.excluded,
        epsilon,
        diverged_at: rec.trajectory.diverged_at,
    };
    Ok((rec, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    /// Fixed `ε` instead of the data estimate.
    pub epsilon: Option<f64>,
    pub search: SearchConfig,
    /// Length of the zero-input closed-loop run checked against the certificate.
    pub steps: usize,
    /// The run starts where `V(x₀)` is at least this multiple of the ball radius.
    pub start_ratio: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { epsilon: None, search: SearchConfig::default(), steps: 5000, start_ratio: 4.0 }
    }
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub certificate: IssCertificate,
    pub verification: Verification,
    pub convergence: ConvergenceReport,
    pub record: ClosedLoopRecord,
    pub x0: Vector,
    pub epsilon_from_data: bool,
}

const MAX_DOUBLINGS: usize = 60;

/// Certifies the model's linear part and checks the ISS ball on a zero-input
/// closed-loop run.
///
/// The run starts from the last state of the open-loop simulation, doubled
/// until it lies outside the ball by `start_ratio`. With a data estimate,
/// `ε` covers the open-loop runs and the run itself, so it is recomputed after
/// every doubling.
pub fn certify(model: &AlSsnnModel, split: &Split, opts: &CertifyOptions) -> AppResult<CertifyOutcome> {
    if let Some(e) = opts.epsilon {
        if !(e.is_finite() && e >= 0.0) {
            return Err(AppError::Usage(format!("epsilon must be finite and non-negative, got {e}")));
        }
    }
    if opts.steps == 0 {
        return Err(AppError::Usage("closed-loop steps must be positive".into()));
    }
    let a = &model.lin.a;
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(alssnn_core::Error::NotSchurStable { spectral_radius: rho }.into());
    }
    let full = split.full()?;
    let open = simulate(model, full.inputs(), &Vector::zeros(model.n()))?.require_finite()?;
    let mut x0 = open.x.column(open.x.ncols() - 1).into_owned();
    if x0.iter().all(|v| *v == 0.0) {
        x0 = Vector::from_element(model.n(), 1.0);
    }
    let v = Mat::zeros(model.m(), opts.steps);
    let mut doublings = 0;
    loop {
        let record = simulate_closed_loop(model, &v, &x0)?;
        let epsilon = match opts.epsilon {
            Some(e) => e,
            None => estimate_epsilon(model, &[&split.train, &split.test], &[&record])?,
        };
        let certificate = solve_certificate(a, epsilon, &opts.search)?;
        let outside = certificate.lyapunov(x0.as_slice()) >= opts.start_ratio * certificate.radius;
        if outside || doublings == MAX_DOUBLINGS || record.trajectory.diverged() {
            let convergence = check_convergence(&certificate, a, &record)?;
            let verification = verify(&certificate, a);
            return Ok(CertifyOutcome {
                certificate,
                verification,
                convergence,
                record,
                x0,
                epsilon_from_data: opts.epsilon.is_none(),
            });
        }
        x0 *= 2.0;
        doublings += 1;
    }
}
