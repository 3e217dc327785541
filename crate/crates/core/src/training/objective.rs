//! Simulation-error residuals and their exact Jacobian by forward sensitivity
//! accumulation through the state recursion.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{simulate_with_bound, AlSsnnModel, GrSsnnModel, StateSpaceModel};

/// Named groups of the full parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    A,
    B,
    C,
    /// `h_n` of an AL-SSNN.
    HNet,
    /// `g_n` of an AL-SSNN.
    GNet,
    /// `f_n` of a GR-SSNN.
    FNet,
}

/// Block structure of a model's full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<(ParamBlock, Range<usize>)>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, block: ParamBlock) -> Option<Range<usize>> {
        self.blocks.iter().find(|(b, _)| *b == block).map(|(_, r)| r.clone())
    }

    fn build(sizes: &[(ParamBlock, usize)]) -> Self {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&(b, len)| {
                let r = start..start + len;
                start += len;
                (b, r)
            })
            .collect();
        Self { blocks }
    }
}

/// Indices of the full parameter vector that the optimizer may move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSelection {
    free: Vec<usize>,
}

impl ParamSelection {
    pub fn new(mut free: Vec<usize>) -> Self {
        free.sort_unstable();
        free.dedup();
        Self { free }
    }

    pub fn from_blocks(layout: &ParamLayout, blocks: &[ParamBlock]) -> Self {
        Self::new(
            layout
                .blocks
                .iter()
                .filter(|(b, _)| blocks.contains(b))
                .flat_map(|(_, r)| r.clone())
                .collect(),
        )
    }

    pub fn indices(&self) -> &[usize] {
        &self.free
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }

    /// Removes every index that a model determines internally.
    pub fn without(mut self, fixed: &[usize]) -> Self {
        self.free.retain(|i| !fixed.contains(i));
        self
    }
}

/// Linearization of one state update at `(x, u)`.
#[derive(Debug, Clone)]
pub struct StepLinearization {
    pub next: Vector,
    /// `∂x₊/∂x`, `n × n`
    pub fx: Mat,
    /// `∂x₊/∂θ` over the full parameter vector, `n × P`
    pub ftheta: Mat,
    /// Penalized residual network value and its derivatives, when present.
    pub penalty: Option<PenaltyLinearization>,
}

#[derive(Debug, Clone)]
pub struct PenaltyLinearization {
    pub value: Vector,
    /// `n_pen × n`
    pub dx: Mat,
    /// `n_pen × P`
    pub dtheta: Mat,
}

/// Models whose parameters can be fitted by simulation-error minimization.
pub trait Trainable: StateSpaceModel + Clone {
    fn layout(&self) -> ParamLayout;

    fn params(&self) -> Vec<f64>;

    /// Sets the full parameter vector and re-applies internal constraints.
    fn set_params(&mut self, theta: &[f64]) -> Result<()>;

    /// Parameters fixed by an internal constraint (never optimized directly).
    fn constrained_params(&self) -> Vec<usize> {
        Vec::new()
    }

    /// Dimension of the penalized nonlinearity (0 when the model has none).
    fn penalty_dim(&self) -> usize {
        0
    }

    fn penalty(&self, _x: &[f64], _u: &[f64]) -> Option<Vector> {
        None
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> StepLinearization;

    /// Linear state matrix `A`.
    fn state_matrix(&self) -> &Mat;

    /// Default free set: everything except `C` when `freeze_c`, minus constrained entries.
    fn default_selection(&self, freeze_c: bool) -> ParamSelection {
        let layout = self.layout();
        let free: Vec<usize> = layout
            .blocks
            .iter()
            .filter(|(b, _)| !(freeze_c && *b == ParamBlock::C))
            .flat_map(|(_, r)| r.clone())
            .collect();
        ParamSelection::new(free).without(&self.constrained_params())
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &Mat) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}

fn read_row_major(m: &mut Mat, theta: &[f64]) {
    let cols = m.ncols();
    for (idx, v) in theta.iter().enumerate() {
        m[(idx / cols, idx % cols)] = *v;
    }
}

/// Fills the `A` and `B` columns of `∂x₊/∂θ`: `e_i x_j` and `e_i w_j`.
fn fill_linear_columns(ftheta: &mut Mat, a: &Range<usize>, b: &Range<usize>, x: &[f64], w: &[f64]) {
    let n = x.len();
    let m = w.len();
    for i in 0..n {
        for j in 0..n {
            ftheta[(i, a.start + i * n + j)] = x[j];
        }
        for j in 0..m {
            ftheta[(i, b.start + i * m + j)] = w[j];
        }
    }
}

impl Trainable for AlSsnnModel {
    fn state_matrix(&self) -> &Mat {
        &self.lin.a
    }

    fn layout(&self) -> ParamLayout {
        let (n, m, p) = (self.n(), self.m(), self.p());
        ParamLayout::build(&[
            (ParamBlock::A, n * n),
            (ParamBlock::B, n * m),
            (ParamBlock::C, p * n),
            (ParamBlock::HNet, self.h_net.param_count()),
            (ParamBlock::GNet, self.g_net.param_count()),
        ])
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        push_row_major(&mut out, &self.lin.a);
        push_row_major(&mut out, &self.lin.b);
        push_row_major(&mut out, &self.lin.c);
        out.extend(self.h_net.params());
        out.extend(self.g_net.params());
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        let layout = self.layout();
        if theta.len() != layout.len() {
            return Err(dim_err!("expected {} parameters, got {}", layout.len(), theta.len()));
        }
        let r = |b| layout.range(b).unwrap();
        read_row_major(&mut self.lin.a, &theta[r(ParamBlock::A)]);
        read_row_major(&mut self.lin.b, &theta[r(ParamBlock::B)]);
        read_row_major(&mut self.lin.c, &theta[r(ParamBlock::C)]);
        self.h_net.set_params(&theta[r(ParamBlock::HNet)])?;
        self.g_net.set_params(&theta[r(ParamBlock::GNet)])?;
        if self.eq_enforced {
            self.project_equilibrium()?;
        }
        Ok(())
    }

    fn constrained_params(&self) -> Vec<usize> {
        if !self.eq_enforced {
            return Vec::new();
        }
        let g = self.layout().range(ParamBlock::GNet).unwrap();
        let off = g.start + self.g_net.b_out_offset();
        (off..g.end).collect()
    }

    fn penalty_dim(&self) -> usize {
        self.n()
    }

    fn penalty(&self, x: &[f64], u: &[f64]) -> Option<Vector> {
        Some(self.g(x, u))
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> StepLinearization {
        let (n, p) = (self.n(), self.p());
        let layout = self.layout();
        let ra = layout.range(ParamBlock::A).unwrap();
        let rb = layout.range(ParamBlock::B).unwrap();
        let rc = layout.range(ParamBlock::C).unwrap();
        let rh = layout.range(ParamBlock::HNet).unwrap();
        let rg = layout.range(ParamBlock::GNet).unwrap();

        let y = self.lin.output(x);
        let hs_h = self.h_net.hidden(y.as_slice());
        let h_val = self.h_net.output_from_hidden(&hs_h);
        let jh_y = self.h_net.jac_input_from_hidden(&hs_h);
        let jh_theta = self.h_net.jac_params_from_hidden(y.as_slice(), &hs_h);

        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        let hs_g = self.g_net.hidden(&z);
        let g_val = self.g_net.output_from_hidden(&hs_g);
        let jg_z = self.g_net.jac_input_from_hidden(&hs_g);
        let mut jg_theta = self.g_net.jac_params_from_hidden(&z, &hs_g);
        if self.eq_enforced {
            // b_out = −W_out σ(W_in z_e + b_in) makes the constrained map
            // W_out (σ(W_in z + b_in) − σ(W_in z_e + b_in)).
            let ze = self.eq.stacked();
            let hs_e = self.g_net.hidden(&ze);
            jg_theta -= self.g_net.jac_params_from_hidden(&ze, &hs_e);
        }
        let jg_x = jg_z.columns(0, n).into_owned();

        let shifted: Vec<f64> = u.iter().zip(h_val.iter()).map(|(a, b)| a + b).collect();
        let mut next = self.lin.linear_part(x, &shifted);
        next += &g_val;

        let b_jh = &self.lin.b * &jh_y; // n × p
        let fx = &self.lin.a + &b_jh * &self.lin.c + &jg_x;

        let mut ftheta = Mat::zeros(n, layout.len());
        fill_linear_columns(&mut ftheta, &ra, &rb, x, &shifted);
        for i in 0..p {
            for j in 0..n {
                let col = rc.start + i * n + j;
                for r in 0..n {
                    ftheta[(r, col)] = b_jh[(r, i)] * x[j];
                }
            }
        }
        ftheta.columns_mut(rh.start, rh.len()).copy_from(&(&self.lin.b * &jh_theta));
        ftheta.columns_mut(rg.start, rg.len()).copy_from(&jg_theta);

        let mut pen_theta = Mat::zeros(n, layout.len());
        pen_theta.columns_mut(rg.start, rg.len()).copy_from(&jg_theta);
        StepLinearization {
            next,
            fx,
            ftheta,
            penalty: Some(PenaltyLinearization { value: g_val, dx: jg_x, dtheta: pen_theta }),
        }
    }
}

impl Trainable for GrSsnnModel {
    fn state_matrix(&self) -> &Mat {
        &self.lin.a
    }

    fn layout(&self) -> ParamLayout {
        let (n, m, p) = (self.lin.n(), self.lin.m(), self.lin.p());
        ParamLayout::build(&[
            (ParamBlock::A, n * n),
            (ParamBlock::B, n * m),
            (ParamBlock::C, p * n),
            (ParamBlock::FNet, self.f_net.param_count()),
        ])
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        push_row_major(&mut out, &self.lin.a);
        push_row_major(&mut out, &self.lin.b);
        push_row_major(&mut out, &self.lin.c);
        out.extend(self.f_net.params());
        out
    }

    fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        let layout = self.layout();
        if theta.len() != layout.len() {
            return Err(dim_err!("expected {} parameters, got {}", layout.len(), theta.len()));
        }
        let r = |b| layout.range(b).unwrap();
        read_row_major(&mut self.lin.a, &theta[r(ParamBlock::A)]);
        read_row_major(&mut self.lin.b, &theta[r(ParamBlock::B)]);
        read_row_major(&mut self.lin.c, &theta[r(ParamBlock::C)]);
        self.f_net.set_params(&theta[r(ParamBlock::FNet)])
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> StepLinearization {
        let n = self.lin.n();
        let layout = self.layout();
        let ra = layout.range(ParamBlock::A).unwrap();
        let rb = layout.range(ParamBlock::B).unwrap();
        let rf = layout.range(ParamBlock::FNet).unwrap();
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        let hs = self.f_net.hidden(&z);
        let f_val = self.f_net.output_from_hidden(&hs);
        let jf_z = self.f_net.jac_input_from_hidden(&hs);
        let jf_theta = self.f_net.jac_params_from_hidden(&z, &hs);
        let mut next = self.lin.linear_part(x, u);
        next += &f_val;
        let fx = &self.lin.a + jf_z.columns(0, n);
        let mut ftheta = Mat::zeros(n, layout.len());
        fill_linear_columns(&mut ftheta, &ra, &rb, x, u);
        ftheta.columns_mut(rf.start, rf.len()).copy_from(&jf_theta);
        StepLinearization { next, fx, ftheta, penalty: None }
    }
}

/// Stacked residual vector: all output errors `y(k) − y_θ(k)` followed by all
/// penalty residuals `√γ · g_n(x(k), u(k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub r: Vector,
    pub samples: usize,
    pub output_len: usize,
}

impl ResidualVector {
    pub fn output_part(&self) -> &[f64] {
        &self.r.as_slice()[..self.output_len]
    }

    pub fn penalty_part(&self) -> &[f64] {
        &self.r.as_slice()[self.output_len..]
    }

    /// `‖r‖² / N`
    pub fn loss(&self) -> f64 {
        sum_sq(self.r.as_slice()) / self.samples as f64
    }

    pub fn components(&self) -> LossComponents {
        let n = self.samples as f64;
        LossComponents { output: sum_sq(self.output_part()) / n, penalty: sum_sq(self.penalty_part()) / n }
    }
}

/// The two terms of the loss, each already divided by `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossComponents {
    /// `(1/N) Σ ‖y − y_θ‖²`
    pub output: f64,
    /// `(γ/N) Σ ‖g_n‖²`
    pub penalty: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.output + self.penalty
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

/// Settings shared by residual and Jacobian evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub gamma: f64,
    pub x0: Option<Vector>,
    pub divergence_bound: f64,
}

impl ObjectiveSpec {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, x0: None, divergence_bound: crate::model::DEFAULT_DIVERGENCE_BOUND }
    }

    fn x0(&self, n: usize) -> Result<Vector> {
        match &self.x0 {
            Some(x0) if x0.len() != n => Err(dim_err!("initial state has length {}, expected {n}", x0.len())),
            Some(x0) => Ok(x0.clone()),
            None => Ok(Vector::zeros(n)),
        }
    }
}

fn check_dataset<M: Trainable>(model: &M, ds: &Dataset) -> Result<()> {
    if ds.input_dim() != model.input_dim() || ds.output_dim() != model.output_dim() {
        return Err(dim_err!(
            "dataset has (m, p) = ({}, {}), model expects ({}, {})",
            ds.input_dim(),
            ds.output_dim(),
            model.input_dim(),
            model.output_dim()
        ));
    }
    Ok(())
}

/// Residual vector of the free-run simulation from `x0` (zero by default).
pub fn residuals_with<M: Trainable>(model: &M, ds: &Dataset, spec: &ObjectiveSpec) -> Result<ResidualVector> {
    check_dataset(model, ds)?;
    if spec.gamma < 0.0 || !spec.gamma.is_finite() {
        return Err(Error::InvalidArgument("gamma must be a finite non-negative number".into()));
    }
    let x0 = spec.x0(model.state_dim())?;
    let traj = simulate_with_bound(model, ds.inputs(), &x0, spec.divergence_bound)?.require_finite()?;
    let (big_n, p, q) = (ds.len(), model.output_dim(), model.penalty_dim());
    let sqrt_gamma = libm::sqrt(spec.gamma);
    let mut r = Vector::zeros(big_n * (p + q));
    for k in 0..big_n {
        for i in 0..p {
            r[k * p + i] = ds.outputs()[(i, k)] - traj.y[(i, k)];
        }
    }
    if q > 0 {
        let mut xk = vec![0.0; model.state_dim()];
        let mut uk = vec![0.0; model.input_dim()];
        for k in 0..big_n {
            xk.iter_mut().zip(traj.x.column(k).iter()).for_each(|(d, s)| *d = *s);
            uk.iter_mut().zip(ds.inputs().column(k).iter()).for_each(|(d, s)| *d = *s);
            let g = model.penalty(&xk, &uk).expect("penalty_dim > 0 implies a penalty");
            for i in 0..q {
                r[big_n * p + k * q + i] = sqrt_gamma * g[i];
            }
        }
    }
    Ok(ResidualVector { r, samples: big_n, output_len: big_n * p })
}

/// Residual vector with zero initial state.
pub fn residuals<M: Trainable>(model: &M, ds: &Dataset, gamma: f64) -> Result<ResidualVector> {
    residuals_with(model, ds, &ObjectiveSpec::new(gamma))
}

/// `J_N(θ) = (1/N) Σ ‖y(k) − y_θ(k)‖² + γ ‖g_n(x(k), u(k))‖²`.
pub fn loss<M: Trainable>(model: &M, ds: &Dataset, gamma: f64) -> Result<f64> {
    residuals(model, ds, gamma).map(|r| r.loss())
}

/// Residuals with the Jacobian `∂r/∂θ` restricted to `selection`.
///
/// State sensitivities follow `S(k+1) = F_x(k) S(k) + F_θ(k)`, `S(0) = 0`;
/// output rows are `−(C S(k) + ∂C/∂θ · x(k))` and penalty rows
/// `√γ (∂g/∂x S(k) + ∂g/∂θ)`.
pub fn jacobian_with<M: Trainable>(
    model: &M,
    ds: &Dataset,
    spec: &ObjectiveSpec,
    selection: &ParamSelection,
) -> Result<(ResidualVector, Mat)> {
    let res = residuals_with(model, ds, spec)?;
    let layout = model.layout();
    if selection.indices().iter().any(|&i| i >= layout.len()) {
        return Err(Error::InvalidArgument("parameter selection out of range".into()));
    }
    let (n, m, p, q) = (model.state_dim(), model.input_dim(), model.output_dim(), model.penalty_dim());
    let big_n = ds.len();
    let x0 = spec.x0(n)?;
    let sqrt_gamma = libm::sqrt(spec.gamma);
    let c = model.linear().c.clone();
    let rc = layout.range(ParamBlock::C).unwrap();
    let free = selection.indices();
    let cols = free.len();

    // Per-step linearizations along the nominal trajectory, restricted to free columns.
    let mut steps: Vec<CompactStep> = Vec::with_capacity(big_n);
    let mut x = x0.as_slice().to_vec();
    let mut uk = vec![0.0; m];
    for k in 0..big_n {
        uk.iter_mut().zip(ds.inputs().column(k).iter()).for_each(|(d, s)| *d = *s);
        let lin = model.linearize(&x, &uk);
        let ftheta = select_columns(&lin.ftheta, free);
        let (gx, gtheta) = match &lin.penalty {
            Some(pen) => (Some(pen.dx.clone()), Some(select_columns(&pen.dtheta, free))),
            None => (None, None),
        };
        steps.push(CompactStep { x: x.clone(), fx: lin.fx, ftheta, gx, gtheta });
        x = lin.next.as_slice().to_vec();
    }

    // Output-map dependence on C entries: ∂(Cx)_i/∂C_ij = x_j.
    let c_cols: Vec<Option<(usize, usize)>> = free
        .iter()
        .map(|&idx| if rc.contains(&idx) { Some(((idx - rc.start) / n, (idx - rc.start) % n)) } else { None })
        .collect();

    let rows = big_n * (p + q);
    let mut jac = Mat::zeros(rows, cols);
    let ctx = ColumnContext { steps: &steps, c: &c, c_cols: &c_cols, n, p, q, big_n, sqrt_gamma };
    fill_columns(&ctx, jac.as_mut_slice(), rows);
    Ok((res, jac))
}

pub fn jacobian_bptt<M: Trainable>(
    model: &M,
    ds: &Dataset,
    gamma: f64,
    selection: &ParamSelection,
) -> Result<(ResidualVector, Mat)> {
    jacobian_with(model, ds, &ObjectiveSpec::new(gamma), selection)
}

struct CompactStep {
    x: Vec<f64>,
    fx: Mat,
    ftheta: Mat,
    gx: Option<Mat>,
    gtheta: Option<Mat>,
}

struct ColumnContext<'a> {
    steps: &'a [CompactStep],
    c: &'a Mat,
    c_cols: &'a [Option<(usize, usize)>],
    n: usize,
    p: usize,
    q: usize,
    big_n: usize,
    sqrt_gamma: f64,
}

fn select_columns(m: &Mat, free: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), free.len(), |i, j| m[(i, free[j])])
}

/// Propagates the sensitivity of one free parameter and writes its Jacobian column.
fn fill_column(ctx: &ColumnContext<'_>, j: usize, out: &mut [f64]) {
    let (n, p, q) = (ctx.n, ctx.p, ctx.q);
    let mut s = vec![0.0; n];
    let mut next = vec![0.0; n];
    for (k, st) in ctx.steps.iter().enumerate() {
        for i in 0..p {
            let mut acc = 0.0;
            for l in 0..n {
                acc += ctx.c[(i, l)] * s[l];
            }
            if let Some((ci, cj)) = ctx.c_cols[j] {
                if ci == i {
                    acc += st.x[cj];
                }
            }
            out[k * p + i] = -acc;
        }
        if let (Some(gx), Some(gt)) = (&st.gx, &st.gtheta) {
            for i in 0..q {
                let mut acc = gt[(i, j)];
                for l in 0..n {
                    acc += gx[(i, l)] * s[l];
                }
                out[ctx.big_n * p + k * q + i] = ctx.sqrt_gamma * acc;
            }
        }
        for i in 0..n {
            let mut acc = st.ftheta[(i, j)];
            for l in 0..n {
                acc += st.fx[(i, l)] * s[l];
            }
            next[i] = acc;
        }
        core::mem::swap(&mut s, &mut next);
    }
}

#[cfg(feature = "parallel")]
fn fill_columns(ctx: &ColumnContext<'_>, data: &mut [f64], rows: usize) {
    use rayon::prelude::*;
    if rows == 0 {
        return;
    }
    data.par_chunks_mut(rows).enumerate().for_each(|(j, col)| fill_column(ctx, j, col));
}

#[cfg(not(feature = "parallel"))]
fn fill_columns(ctx: &ColumnContext<'_>, data: &mut [f64], rows: usize) {
    if rows == 0 {
        return;
    }
    for (j, col) in data.chunks_mut(rows).enumerate() {
        fill_column(ctx, j, col);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearSS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_al(n: usize, m: usize, p: usize, seed: u64, enforce: bool) -> AlSsnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: f64| rng.random_range(-s..s);
        let a = Mat::from_fn(n, n, |i, j| if i == j { 0.5 } else { 0.0 } + r(0.15));
        let b = Mat::from_fn(n, m, |_, _| r(1.0));
        let c = Mat::from_fn(p, n, |_, _| r(1.0));
        let lin = LinearSS::new(a, b, c).unwrap();
        let mut model = AlSsnnModel::from_linear(lin, 4, 5, 0.5, seed + 1, enforce);
        let mut hb = model.h_net.b_out().clone();
        hb.iter_mut().for_each(|v| *v = r(0.3));
        model.h_net.set_b_out(hb).unwrap();
        if !enforce {
            let mut gb = model.g_net.b_out().clone();
            gb.iter_mut().for_each(|v| *v = r(0.3));
            model.g_net.set_b_out(gb).unwrap();
        }
        model
    }

    fn random_ds(big_n: usize, m: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Mat::from_fn(m, big_n, |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(p, big_n, |_, _| rng.random_range(-1.0..1.0));
        Dataset::new("rand", 1.0, u, y).unwrap()
    }

    fn fd_jacobian<M: Trainable>(model: &M, ds: &Dataset, gamma: f64, sel: &ParamSelection, h: f64) -> Mat {
        let theta = model.params();
        let base = residuals(model, ds, gamma).unwrap();
        let mut jac = Mat::zeros(base.r.len(), sel.len());
        for (c, &idx) in sel.indices().iter().enumerate() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[idx] += h;
            tm[idx] -= h;
            let mut mp = model.clone();
            let mut mm = model.clone();
            mp.set_params(&tp).unwrap();
            mm.set_params(&tm).unwrap();
            let rp = residuals(&mp, ds, gamma).unwrap().r;
            let rm = residuals(&mm, ds, gamma).unwrap().r;
            jac.set_column(c, &((rp - rm) / (2.0 * h)));
        }
        jac
    }

    fn rel_err(a: &Mat, b: &Mat) -> f64 {
        (a - b).amax() / b.amax().max(1e-12)
    }

    #[test]
    fn residual_layout_and_gamma_switch() {
        let model = random_al(2, 1, 1, 3, false);
        let ds = random_ds(15, 1, 1, 4);
        let r = residuals(&model, &ds, 0.0).unwrap();
        assert_eq!(r.r.len(), 15 + 15 * 2);
        assert!(r.penalty_part().iter().all(|&v| v == 0.0));
        let r = residuals(&model, &ds, 2.0).unwrap();
        assert!(r.penalty_part().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_matches_direct_sum() {
        let model = random_al(2, 1, 1, 5, false);
        let ds = random_ds(25, 1, 1, 6);
        let gamma = 0.7;
        // Direct evaluation of the cost by stepping the model by hand.
        let mut x = vec![0.0; 2];
        let mut acc = 0.0;
        for k in 0..ds.len() {
            let u = [ds.inputs()[(0, k)]];
            let y = model.lin.output(&x);
            let e = ds.outputs()[(0, k)] - y[0];
            let g = model.g(&x, &u);
            acc += e * e + gamma * g.norm_squared();
            x = model.step(&x, &u).unwrap().as_slice().to_vec();
        }
        let direct = acc / ds.len() as f64;
        let l = loss(&model, &ds, gamma).unwrap();
        assert!((l - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn frozen_c_has_no_columns() {
        let model = random_al(2, 1, 1, 7, true);
        let layout = model.layout();
        let rc = layout.range(ParamBlock::C).unwrap();
        let sel = model.default_selection(true);
        assert!(sel.indices().iter().all(|i| !rc.contains(i)));
        let sel_free = model.default_selection(false);
        assert_eq!(sel_free.len(), sel.len() + rc.len());
        // equilibrium-constrained b_out of g is excluded
        let rg = layout.range(ParamBlock::GNet).unwrap();
        assert!(!sel.indices().contains(&(rg.end - 1)));
    }

    #[test]
    fn scalar_sensitivity_to_a() {
        // y(k) = Σ_{j<k} a^{k-1-j} b u(j); ∂y(k)/∂a = Σ_{j<k-1} (k-1-j) a^{k-2-j} b u(j)
        let lin = LinearSS::new(Mat::from_element(1, 1, 0.6), Mat::from_element(1, 1, 1.3), Mat::from_element(1, 1, 1.0)).unwrap();
        let model = AlSsnnModel::from_linear(lin, 2, 2, 0.0, 1, true);
        let ds = random_ds(12, 1, 1, 9);
        let sel = ParamSelection::from_blocks(&model.layout(), &[ParamBlock::A]);
        let (_, jac) = jacobian_bptt(&model, &ds, 1.0, &sel).unwrap();
        let (a, b) = (0.6f64, 1.3f64);
        for k in 0..ds.len() {
            let mut d = 0.0;
            for j in 0..k.saturating_sub(1) {
                let pw = (k - 1 - j) as f64;
                d += pw * libm::pow(a, pw - 1.0) * b * ds.inputs()[(0, j)];
            }
            assert!((jac[(k, 0)] + d).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for (seed, enforce, freeze) in [(1u64, true, true), (2, false, false), (3, true, false)] {
            let model = random_al(2, 1, 1, seed, enforce);
            let ds = random_ds(20, 1, 1, seed + 50);
            let sel = model.default_selection(freeze);
            let (_, jac) = jacobian_bptt(&model, &ds, 0.8, &sel).unwrap();
            let fd = fd_jacobian(&model, &ds, 0.8, &sel, 1e-6);
            assert!(rel_err(&jac, &fd) < 1e-5, "seed {seed}: {}", rel_err(&jac, &fd));
        }
    }

    #[test]
    fn gr_jacobian_matches_finite_differences() {
        let lin = random_al(3, 2, 1, 11, false).lin;
        let mut gr = GrSsnnModel::from_linear(lin, 6, 0.4, 12);
        let mut b = gr.f_net.b_out().clone();
        b[0] = 0.1;
        gr.f_net.set_b_out(b).unwrap();
        let ds = random_ds(18, 2, 1, 13);
        let sel = gr.default_selection(false);
        let (res, jac) = jacobian_bptt(&gr, &ds, 0.0, &sel).unwrap();
        assert_eq!(res.r.len(), 18);
        let fd = fd_jacobian(&gr, &ds, 0.0, &sel, 1e-6);
        assert!(rel_err(&jac, &fd) < 1e-5);
    }

    #[test]
    fn divergence_is_an_error() {
        let lin = LinearSS::new(Mat::from_element(1, 1, 3.0), Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, 1.0)).unwrap();
        let model = AlSsnnModel::from_linear(lin, 2, 2, 0.0, 1, true);
        let ds = Dataset::new("ones", 1.0, Mat::from_element(1, 60, 1.0), Mat::zeros(1, 60)).unwrap();
        assert!(matches!(residuals(&model, &ds, 1.0), Err(Error::Divergence { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let model = random_al(2, 1, 1, 1, true);
        let ds = random_ds(10, 2, 1, 2);
        assert!(residuals(&model, &ds, 1.0).is_err());
    }
}
