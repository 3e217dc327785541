//! Levenberg-Marquardt in normal-equation form with Marquardt diagonal scaling.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Mat, Vector};

use super::objective::{jacobian_with, residuals_with, LossComponents, ObjectiveSpec, ParamSelection, Trainable};

/// Damping is kept inside this range; reaching the upper end ends training.
pub const LAMBDA_MIN: f64 = 1e-15;
pub const LAMBDA_MAX: f64 = 1e15;

/// Normal-equation data at the current parameters, reused across rejected steps.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub loss: f64,
    pub components: LossComponents,
    pub jtj: Mat,
    /// `Jᵀr`
    pub jtr: Vector,
    pub samples: usize,
}

impl NormalEquations {
    pub fn assemble<M: Trainable>(model: &M, ds: &Dataset, spec: &ObjectiveSpec, sel: &ParamSelection) -> Result<Self> {
        let (res, jac) = jacobian_with(model, ds, spec, sel)?;
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&res.r);
        Ok(Self { loss: res.loss(), components: res.components(), jtj, jtr, samples: res.samples })
    }

    /// `∇J_N = (2/N) Jᵀr`, ∞-norm.
    pub fn gradient_inf_norm(&self) -> f64 {
        let scale = 2.0 / self.samples as f64;
        self.jtr.iter().fold(0.0, |m, v| f64::max(m, libm::fabs(scale * v)))
    }

    /// `diag(JᵀJ)` with zero entries replaced by 1.
    pub fn marquardt_scale(&self) -> Vector {
        Vector::from_iterator(self.jtj.nrows(), (0..self.jtj.nrows()).map(|i| {
            let d = self.jtj[(i, i)];
            if d == 0.0 { 1.0 } else { d }
        }))
    }

    /// Solves `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr`; `None` when the system is not positive definite.
    pub fn solve(&self, lambda: f64) -> Option<Vector> {
        self.solve_scaled(lambda, &self.marquardt_scale())
    }

    /// Solves `(JᵀJ + λ·diag(d)) δ = −Jᵀr`.
    pub fn solve_scaled(&self, lambda: f64, d: &Vector) -> Option<Vector> {
        let mut lhs = self.jtj.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += lambda * d[i];
        }
        let delta = lhs.cholesky()?.solve(&(-&self.jtr));
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}

/// Outcome of one damped step.
#[derive(Debug, Clone)]
pub struct StepOutcome<M> {
    pub model: M,
    pub lambda: f64,
    pub accepted: bool,
    /// Loss of the returned model.
    pub loss: f64,
    pub components: LossComponents,
    /// `‖δ‖∞`, zero when the solve failed.
    pub step_norm: f64,
}

/// Damping schedule of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub up: f64,
    pub down: f64,
}

/// Per-step settings of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOptions {
    pub damping: Damping,
    /// Damping scale `d` in `JᵀJ + λ·diag(d)`; `diag(JᵀJ)` when `None`.
    pub scale: Option<Vector>,
    /// Candidates with `ρ(A)` above this bound are rejected unless they
    /// lower `ρ(A)` relative to the current model.
    pub max_spectral_radius: Option<f64>,
}

impl StepOptions {
    pub fn new(damping: Damping) -> Self {
        Self { damping, scale: None, max_spectral_radius: None }
    }
}

/// One step from precomputed normal equations. A rejected step returns a
/// clone of `model` with its parameters untouched.
pub fn step_from<M: Trainable>(
    model: &M,
    normal: &NormalEquations,
    ds: &Dataset,
    spec: &ObjectiveSpec,
    sel: &ParamSelection,
    lambda: f64,
    opts: &StepOptions,
) -> Result<StepOutcome<M>> {
    let damping = opts.damping;
    let reject = |step_norm: f64| StepOutcome {
        model: model.clone(),
        lambda: (lambda * damping.up).min(LAMBDA_MAX),
        accepted: false,
        loss: normal.loss,
        components: normal.components,
        step_norm,
    };
    let solved = match &opts.scale {
        Some(d) => normal.solve_scaled(lambda, d),
        None => normal.solve(lambda),
    };
    let Some(delta) = solved else {
        return Ok(reject(0.0));
    };
    let step_norm = delta.amax();
    let mut theta: Vec<f64> = model.params();
    for (d, &idx) in delta.iter().zip(sel.indices()) {
        theta[idx] += d;
    }
    let mut candidate = model.clone();
    candidate.set_params(&theta)?;
    if let Some(bound) = opts.max_spectral_radius {
        let rho = spectral_radius(candidate.state_matrix());
        if !(rho <= bound || rho < spectral_radius(model.state_matrix())) {
            return Ok(reject(step_norm));
        }
    }
    let res = match residuals_with(&candidate, ds, spec) {
        Ok(r) => r,
        Err(Error::Divergence { .. }) => return Ok(reject(step_norm)),
        Err(e) => return Err(e),
    };
    let loss = res.loss();
    if loss.is_finite() && loss < normal.loss {
        Ok(StepOutcome {
            model: candidate,
            lambda: (lambda * damping.down).max(LAMBDA_MIN),
            accepted: true,
            loss,
            components: res.components(),
            step_norm,
        })
    } else {
        Ok(reject(step_norm))
    }
}

/// One Levenberg-Marquardt step at damping `lambda`.
pub fn lm_step<M: Trainable>(
    model: &M,
    ds: &Dataset,
    spec: &ObjectiveSpec,
    sel: &ParamSelection,
    lambda: f64,
    damping: Damping,
) -> Result<StepOutcome<M>> {
    let normal = NormalEquations::assemble(model, ds, spec, sel)?;
    step_from(model, &normal, ds, spec, sel, lambda, &StepOptions::new(damping))
}
