//! Simulation-error training of AL-SSNN and GR-SSNN models.
//!
//! The loss is `J_N(θ) = (1/N) Σ ‖y(k) − y_θ(k)‖² + γ ‖g_n(x(k), u(k))‖²`
//! over the free-run simulation from `x(0) = 0`. Training starts from the
//! linear initialization with zero networks and keeps `C` at its initial value
//! unless told otherwise.

mod lm;
mod objective;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use lm::{lm_step, step_from, Damping, NormalEquations, StepOptions, StepOutcome, LAMBDA_MAX, LAMBDA_MIN};
pub use objective::{
    jacobian_bptt, jacobian_with, loss, residuals, residuals_with, LossComponents, ObjectiveSpec, ParamBlock,
    ParamLayout, ParamSelection, PenaltyLinearization, ResidualVector, StepLinearization, Trainable,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AlSsnnModel, GrSsnnModel};
use crate::sysid::{default_horizon, linear_init_report};

/// Optimizer and architecture settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    /// Weight `γ` of the residual-nonlinearity penalty.
    pub gamma: f64,
    pub max_iters: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop when `‖∇J_N‖∞` falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step has `‖δ‖∞ ≤ step_tol·(‖θ‖∞ + step_tol)`.
    pub step_tol: f64,
    /// Stop when the relative loss decrease over the last 10 accepted steps falls below this.
    pub loss_tol: f64,
    pub seed: u64,
    pub freeze_c: bool,
    pub enforce_equilibrium: bool,
    /// Hidden width of `h_n` (AL-SSNN) or `f_n` (GR-SSNN).
    pub n_h: usize,
    /// Hidden width of `g_n`.
    pub n_g: usize,
    /// FIR horizon of the linear initialization; `None` picks `max(20, 5n)`.
    pub horizon: Option<usize>,
    /// Output-layer scale of the initial networks; 0 starts from the linear model exactly.
    pub init_scale: f64,
    /// Reject steps that push `ρ(A)` above this bound.
    pub max_spectral_radius: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_iters: 100,
            lambda0: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            loss_tol: 1e-10,
            seed: 0,
            freeze_c: true,
            enforce_equilibrium: true,
            n_h: 10,
            n_g: 10,
            horizon: None,
            init_scale: 0.0,
            max_spectral_radius: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be finite and non-negative");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.lambda_up.is_finite() && self.lambda_up > 1.0) {
            return bad("lambda_up must exceed 1");
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad("lambda_down must lie in (0, 1)");
        }
        for (name, v) in [("grad_tol", self.grad_tol), ("step_tol", self.step_tol), ("loss_tol", self.loss_tol)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("train config: {name} must be finite and non-negative")));
            }
        }
        if self.n_h == 0 || self.n_g == 0 {
            return bad("hidden widths must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be finite and non-negative");
        }
        if let Some(r) = self.max_spectral_radius {
            if !(r.is_finite() && r > 0.0) {
                return bad("max_spectral_radius must be positive");
            }
        }
        Ok(())
    }

    fn damping(&self) -> Damping {
        Damping { up: self.lambda_up, down: self.lambda_down }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    MaxIters,
    LossStalled,
    GradientTol,
    StepTol,
    LambdaSaturated,
    ZeroLoss,
}

/// One optimizer iteration. `loss` is the loss after the iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub output_loss: f64,
    pub penalty_loss: f64,
    /// Damping used for the step.
    pub lambda: f64,
    pub accepted: bool,
    pub step_norm: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub family: String,
    pub config: TrainConfig,
    pub order: usize,
    pub horizon: usize,
    pub free_params: usize,
    pub hankel_singular_values: Vec<f64>,
    pub initial: LossComponents,
    #[cfg_attr(feature = "serde", serde(rename = "final"))]
    pub final_loss: LossComponents,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Initial loss followed by the loss after every accepted step.
    pub fn accepted_losses(&self) -> Vec<f64> {
        core::iter::once(self.initial.total())
            .chain(self.iterations.iter().filter(|r| r.accepted).map(|r| r.loss))
            .collect()
    }

    pub fn accepted_steps(&self) -> usize {
        self.iterations.iter().filter(|r| r.accepted).count()
    }
}

/// Receives every iteration as it completes.
pub trait TrainObserver {
    fn on_iteration(&mut self, _record: &IterationRecord) {}
}

impl TrainObserver for () {}

impl<F: FnMut(&IterationRecord)> TrainObserver for F {
    fn on_iteration(&mut self, record: &IterationRecord) {
        self(record)
    }
}

const STALL_WINDOW: usize = 10;

/// Result of an optimizer run on a given model and free set.
#[derive(Debug, Clone)]
pub struct FitOutcome<M> {
    pub model: M,
    pub initial: LossComponents,
    pub final_loss: LossComponents,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

/// Runs Levenberg-Marquardt from `model` over the parameters in `sel`.
pub fn fit<M: Trainable>(
    model: M,
    ds: &Dataset,
    sel: &ParamSelection,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutcome<M>> {
    config.validate()?;
    let spec = ObjectiveSpec::new(config.gamma);
    let mut model = model;
    let mut normal = NormalEquations::assemble(&model, ds, &spec, sel)?;
    let initial = normal.components;
    let mut lambda = config.lambda0;
    // Damping scale: running maximum of diag(JᵀJ), so directions that flatten
    // out (saturated units) keep the damping they had earlier.
    let mut opts = StepOptions {
        damping: config.damping(),
        scale: Some(normal.marquardt_scale()),
        max_spectral_radius: config.max_spectral_radius,
    };
    let mut iterations = Vec::new();
    let mut accepted_history = alloc::vec![normal.loss];
    let mut stop_reason = StopReason::MaxIters;

    for iter in 1..=config.max_iters {
        if normal.loss == 0.0 {
            stop_reason = StopReason::ZeroLoss;
            break;
        }
        let gradient_norm = normal.gradient_inf_norm();
        if gradient_norm < config.grad_tol {
            stop_reason = StopReason::GradientTol;
            break;
        }
        let out = step_from(&model, &normal, ds, &spec, sel, lambda, &opts)?;
        let record = IterationRecord {
            iter,
            loss: out.loss,
            output_loss: out.components.output,
            penalty_loss: out.components.penalty,
            lambda,
            accepted: out.accepted,
            step_norm: out.step_norm,
            gradient_norm,
        };
        observer.on_iteration(&record);
        iterations.push(record);
        let saturated = !out.accepted && lambda >= LAMBDA_MAX;
        lambda = out.lambda;
        if out.accepted {
            let theta_norm = model.params().iter().fold(0.0, |m, v| f64::max(m, libm::fabs(*v)));
            model = out.model;
            accepted_history.push(out.loss);
            if out.step_norm <= config.step_tol * (theta_norm + config.step_tol) {
                stop_reason = StopReason::StepTol;
                break;
            }
            let len = accepted_history.len();
            if len > STALL_WINDOW {
                let old = accepted_history[len - 1 - STALL_WINDOW];
                if (old - out.loss) / old < config.loss_tol {
                    stop_reason = StopReason::LossStalled;
                    break;
                }
            }
            if iter < config.max_iters {
                normal = NormalEquations::assemble(&model, ds, &spec, sel)?;
                let scale = opts.scale.as_mut().expect("scale is always set");
                for (s, d) in scale.iter_mut().zip(normal.marquardt_scale().iter()) {
                    *s = s.max(*d);
                }
            } else {
                normal.loss = out.loss;
                normal.components = out.components;
            }
        } else if saturated {
            stop_reason = StopReason::LambdaSaturated;
            break;
        }
    }
    Ok(FitOutcome { model, initial, final_loss: normal.components, iterations, stop_reason })
}

/// Identifies an AL-SSNN of order `n`.
///
/// Pipeline: linear initialization, zero-output networks, `C` frozen at `C₀`
/// (when `freeze_c`), Levenberg-Marquardt, equilibrium re-projection.
pub fn train(ds: &Dataset, n: usize, config: &TrainConfig) -> Result<(AlSsnnModel, TrainReport)> {
    train_observed(ds, n, config, &mut ())
}

pub fn train_observed(
    ds: &Dataset,
    n: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(AlSsnnModel, TrainReport)> {
    config.validate()?;
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(n));
    let init = linear_init_report(ds, n, horizon)?;
    let mut model = AlSsnnModel::from_linear(
        init.system,
        config.n_h,
        config.n_g,
        config.init_scale,
        config.seed,
        config.enforce_equilibrium,
    );
    model.c_frozen = config.freeze_c;
    let sel = model.default_selection(config.freeze_c);
    let out = fit(model, ds, &sel, config, observer)?;
    let mut model = out.model;
    if model.eq_enforced {
        model.project_equilibrium()?;
    }
    let report = TrainReport {
        family: "al-ssnn".into(),
        config: config.clone(),
        order: n,
        horizon,
        free_params: sel.len(),
        hankel_singular_values: init.singular_values,
        initial: out.initial,
        final_loss: out.final_loss,
        iterations: out.iterations,
        stop_reason: out.stop_reason,
    };
    Ok((model, report))
}

/// Identifies a GR-SSNN `x₊ = Ax + Bu + f_n(x,u)` of order `n` with `f_n` of width `n_f`.
///
/// Same pipeline as [`train`] without the penalty; `config.gamma` is ignored.
pub fn train_gr(ds: &Dataset, n: usize, n_f: usize, config: &TrainConfig) -> Result<(GrSsnnModel, TrainReport)> {
    train_gr_observed(ds, n, n_f, config, &mut ())
}

pub fn train_gr_observed(
    ds: &Dataset,
    n: usize,
    n_f: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(GrSsnnModel, TrainReport)> {
    config.validate()?;
    if n_f == 0 {
        return Err(Error::InvalidArgument("hidden width must be positive".into()));
    }
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(n));
    let init = linear_init_report(ds, n, horizon)?;
    let model = GrSsnnModel::from_linear(init.system, n_f, config.init_scale, config.seed);
    let sel = model.default_selection(config.freeze_c);
    let mut cfg = config.clone();
    cfg.gamma = 0.0;
    cfg.n_h = n_f;
    let out = fit(model, ds, &sel, &cfg, observer)?;
    let report = TrainReport {
        family: "gr-ssnn".into(),
        config: cfg,
        order: n,
        horizon,
        free_params: sel.len(),
        hankel_singular_values: init.singular_values,
        initial: out.initial,
        final_loss: out.final_loss,
        iterations: out.iterations,
        stop_reason: out.stop_reason,
    };
    Ok((out.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Mat, Vector};
    use crate::model::{simulate, LinearSS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plant() -> LinearSS {
        LinearSS::new(
            Mat::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]),
            Mat::from_row_slice(2, 1, &[1.0, 0.3]),
            Mat::from_row_slice(1, 2, &[1.0, 0.5]),
        )
        .unwrap()
    }

    /// Linear plant followed by a mild static output nonlinearity.
    fn nonlinear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Mat::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        let tr = simulate(&plant(), &u, &Vector::zeros(2)).unwrap();
        let y = tr.y.map(|v| v + 0.2 * libm::tanh(2.0 * v));
        Dataset::new("wiener", 1.0, u, y).unwrap()
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Mat::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        let tr = simulate(&plant(), &u, &Vector::zeros(2)).unwrap();
        Dataset::new("lin", 1.0, u, tr.y).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig { max_iters: 15, n_h: 4, n_g: 4, seed: 3, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { gamma: -1.0, ..Default::default() },
            TrainConfig { max_iters: 0, ..Default::default() },
            TrainConfig { lambda_up: 1.0, ..Default::default() },
            TrainConfig { lambda_down: 1.0, ..Default::default() },
            TrainConfig { lambda0: 0.0, ..Default::default() },
            TrainConfig { n_g: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn accepted_losses_strictly_decrease() {
        let ds = nonlinear_data(300, 1);
        let (model, report) = train(&ds, 2, &small_config()).unwrap();
        let losses = report.accepted_losses();
        assert!(losses.len() > 1);
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
        assert!(report.final_loss.total() <= report.initial.total());
        let direct = loss(&model, &ds, 1.0).unwrap();
        assert!((direct - report.final_loss.total()).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn frozen_c_and_equilibrium_hold() {
        let ds = nonlinear_data(300, 2);
        let cfg = small_config();
        let c0 = crate::sysid::linear_init(&ds, 2, default_horizon(2)).unwrap().c;
        let (model, _) = train(&ds, 2, &cfg).unwrap();
        assert_eq!(model.lin.c, c0);
        let ze = model.eq.stacked();
        assert!(model.g_net.forward(&ze).unwrap().amax() <= 1e-12);
    }

    #[test]
    fn linear_data_keeps_penalty_small() {
        let ds = linear_data(300, 3);
        let (_, report) = train(&ds, 2, &small_config()).unwrap();
        assert!(report.final_loss.penalty <= 1e-10);
        assert!(report.final_loss.total() <= report.initial.total());
    }

    #[test]
    fn gr_zero_init_matches_linear_loss() {
        let ds = nonlinear_data(300, 4);
        let lin = crate::sysid::linear_init(&ds, 2, default_horizon(2)).unwrap();
        let lin_loss = loss(&AlSsnnModel::from_linear(lin, 2, 2, 0.0, 0, true), &ds, 0.0).unwrap();
        let (_, report) = train_gr(&ds, 2, 4, &small_config()).unwrap();
        assert!((report.initial.total() - lin_loss).abs() <= 1e-12 * lin_loss);
        let losses = report.accepted_losses();
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = nonlinear_data(200, 5);
        let (a, ra) = train(&ds, 2, &small_config()).unwrap();
        let (b, rb) = train(&ds, 2, &small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn observer_sees_every_iteration() {
        let ds = nonlinear_data(200, 6);
        let mut seen = 0usize;
        let mut obs = |_: &IterationRecord| seen += 1;
        let (_, report) = train_observed(&ds, 2, &small_config(), &mut obs).unwrap();
        assert_eq!(seen, report.iterations.len());
    }

    #[test]
    fn exact_linear_data_stops_early() {
        let ds = linear_data(200, 7);
        let cfg = TrainConfig { max_iters: 500, ..small_config() };
        let (_, report) = train(&ds, 2, &cfg).unwrap();
        assert_ne!(report.stop_reason, StopReason::MaxIters);
    }
}
