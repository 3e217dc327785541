//! Model families and free-run simulation.
//!
//! * [`LinearSS`]: `x₊ = Ax + Bu`
//! * [`GrSsnnModel`]: `x₊ = Ax + Bu + f_n(x,u)`
//! * [`AlSsnnModel`]: `x₊ = Ax + B(u + h_n(Cx)) + g_n(x,u)`
//!
//! All three share the linear output map `y = Cx`, evaluated before the
//! state update.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::mlp::{enforce_equilibrium_zero, Equilibrium, Mlp, MlpDims};

/// State norm beyond which a simulation is declared divergent.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSS {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl LinearSS {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(dim_err!(
                "A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            ));
        }
        if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::Dimension("state, input and output dimensions must be >= 1".into()));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state-space matrices must be finite".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Markov parameters `C A^{i-1} B` for `i = 1..=count`.
    pub fn markov_parameters(&self, count: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(count);
        let mut ab = self.b.clone();
        for _ in 0..count {
            out.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        out
    }

    /// `Ax + Bu` written into `out`.
    #[inline]
    pub(crate) fn linear_part_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n(), self.m());
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += self.b[(i, j)] * u[j];
            }
            out[i] = acc;
        }
    }

    #[inline]
    pub(crate) fn output_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.p() {
            let mut acc = 0.0;
            for j in 0..self.n() {
                acc += self.c[(i, j)] * x[j];
            }
            out[i] = acc;
        }
    }

    /// `Ax + Bu`
    pub fn linear_part(&self, x: &[f64], u: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.n());
        self.linear_part_into(x, u, out.as_mut_slice());
        out
    }

    pub fn output(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.p());
        self.output_into(x, out.as_mut_slice());
        out
    }
}

/// Generalized residual neural state-space model `x₊ = Ax + Bu + f_n(x,u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrSsnnModel {
    pub lin: LinearSS,
    pub f_net: Mlp,
}

impl GrSsnnModel {
    pub fn new(lin: LinearSS, f_net: Mlp) -> Result<Self> {
        let (n, m) = (lin.n(), lin.m());
        if f_net.d_in() != n + m || f_net.d_out() != n {
            return Err(dim_err!(
                "f_net maps R^{} -> R^{}, expected R^{} -> R^{}",
                f_net.d_in(),
                f_net.d_out(),
                n + m,
                n
            ));
        }
        Ok(Self { lin, f_net })
    }

    /// Linear model with an output-layer-scaled network (`scale = 0` gives `f_n ≡ 0`).
    pub fn from_linear(lin: LinearSS, n_f: usize, scale: f64, seed: u64) -> Self {
        let (n, m) = (lin.n(), lin.m());
        let f_net = Mlp::init_small(MlpDims { d_in: n + m, n_hidden: n_f, d_out: n }, scale, seed);
        Self { lin, f_net }
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Vector {
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        self.f_net.output_from_hidden(&self.f_net.hidden(&z))
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        check_xu(self.lin.n(), self.lin.m(), x, u)?;
        Ok(self.step_unchecked(x, u))
    }

    fn step_unchecked(&self, x: &[f64], u: &[f64]) -> Vector {
        let mut next = self.lin.linear_part(x, u);
        next += self.f(x, u);
        next
    }
}

/// Approximately feedback-linearizable neural state-space model.
///
/// `x₊ = Ax + B(u + h_n(y)) + g_n(x,u)`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlSsnnModel {
    pub lin: LinearSS,
    /// `h_n : R^p → R^m`
    pub h_net: Mlp,
    /// `g_n : R^{n+m} → R^n`
    pub g_net: Mlp,
    pub eq: Equilibrium,
    /// Whether `g_n(x_e, u_e) = 0` is maintained.
    pub eq_enforced: bool,
    pub c_frozen: bool,
}

impl AlSsnnModel {
    pub fn new(
        lin: LinearSS,
        h_net: Mlp,
        g_net: Mlp,
        eq: Equilibrium,
        eq_enforced: bool,
        c_frozen: bool,
    ) -> Result<Self> {
        let (n, m, p) = (lin.n(), lin.m(), lin.p());
        if h_net.d_in() != p || h_net.d_out() != m {
            return Err(dim_err!(
                "h_net maps R^{} -> R^{}, expected R^{} -> R^{}",
                h_net.d_in(),
                h_net.d_out(),
                p,
                m
            ));
        }
        if g_net.d_in() != n + m || g_net.d_out() != n {
            return Err(dim_err!(
                "g_net maps R^{} -> R^{}, expected R^{} -> R^{}",
                g_net.d_in(),
                g_net.d_out(),
                n + m,
                n
            ));
        }
        if eq.x_e.len() != n || eq.u_e.len() != m {
            return Err(dim_err!("equilibrium has dimensions ({}, {}), expected ({n}, {m})", eq.x_e.len(), eq.u_e.len()));
        }
        let mut model = Self { lin, h_net, g_net, eq, eq_enforced, c_frozen };
        if eq_enforced {
            model.project_equilibrium()?;
        }
        Ok(model)
    }

    /// Linear initialization: networks with output layers scaled by `scale`
    /// (`scale = 0` realizes `h_n ≡ 0`, `g_n ≡ 0`), equilibrium at the origin.
    pub fn from_linear(
        lin: LinearSS,
        n_h: usize,
        n_g: usize,
        scale: f64,
        seed: u64,
        eq_enforced: bool,
    ) -> Self {
        let (n, m, p) = (lin.n(), lin.m(), lin.p());
        let h_net = Mlp::init_small(MlpDims { d_in: p, n_hidden: n_h, d_out: m }, scale, seed);
        let g_net = Mlp::init_small(
            MlpDims { d_in: n + m, n_hidden: n_g, d_out: n },
            scale,
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        );
        let eq = Equilibrium::origin(n, m);
        Self::new(lin, h_net, g_net, eq, eq_enforced, true).expect("dimensions are consistent by construction")
    }

    pub fn n(&self) -> usize {
        self.lin.n()
    }

    pub fn m(&self) -> usize {
        self.lin.m()
    }

    pub fn p(&self) -> usize {
        self.lin.p()
    }

    /// Re-computes `b_out` of `g_n` so that `g_n(x_e, u_e) = 0`.
    pub fn project_equilibrium(&mut self) -> Result<()> {
        self.g_net = enforce_equilibrium_zero(&self.g_net, &self.eq)?;
        Ok(())
    }

    pub fn h(&self, y: &[f64]) -> Vector {
        self.h_net.output_from_hidden(&self.h_net.hidden(y))
    }

    pub fn g(&self, x: &[f64], u: &[f64]) -> Vector {
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        self.g_net.output_from_hidden(&self.g_net.hidden(&z))
    }

    /// The lumped nonlinearity `f_n(x,u) = B h_n(Cx) + g_n(x,u)`.
    pub fn lumped_nonlinearity(&self, x: &[f64], u: &[f64]) -> Vector {
        let y = self.lin.output(x);
        &self.lin.b * self.h(y.as_slice()) + self.g(x, u)
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        check_xu(self.n(), self.m(), x, u)?;
        Ok(self.step_unchecked(x, u))
    }

    fn step_unchecked(&self, x: &[f64], u: &[f64]) -> Vector {
        let y = self.lin.output(x);
        let hu = self.h(y.as_slice());
        let shifted: Vec<f64> = u.iter().zip(hu.iter()).map(|(a, b)| a + b).collect();
        let mut next = self.lin.linear_part(x, &shifted);
        next += self.g(x, u);
        next
    }
}

fn check_xu(n: usize, m: usize, x: &[f64], u: &[f64]) -> Result<()> {
    if x.len() != n || u.len() != m {
        return Err(dim_err!("state/input of length ({}, {}), expected ({n}, {m})", x.len(), u.len()));
    }
    Ok(())
}

/// Anything that can be stepped and observed through `y = Cx`.
pub trait StateSpaceModel {
    fn linear(&self) -> &LinearSS;

    /// One state update; inputs are assumed dimension-checked.
    fn step_raw(&self, x: &[f64], u: &[f64]) -> Vector;

    fn state_dim(&self) -> usize {
        self.linear().n()
    }

    fn input_dim(&self) -> usize {
        self.linear().m()
    }

    fn output_dim(&self) -> usize {
        self.linear().p()
    }
}

impl StateSpaceModel for LinearSS {
    fn linear(&self) -> &LinearSS {
        self
    }

    fn step_raw(&self, x: &[f64], u: &[f64]) -> Vector {
        self.linear_part(x, u)
    }
}

impl StateSpaceModel for GrSsnnModel {
    fn linear(&self) -> &LinearSS {
        &self.lin
    }

    fn step_raw(&self, x: &[f64], u: &[f64]) -> Vector {
        self.step_unchecked(x, u)
    }
}

impl StateSpaceModel for AlSsnnModel {
    fn linear(&self) -> &LinearSS {
        &self.lin
    }

    fn step_raw(&self, x: &[f64], u: &[f64]) -> Vector {
        self.step_unchecked(x, u)
    }
}

/// Any of the three model families.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Lti(LinearSS),
    Gr(GrSsnnModel),
    Al(AlSsnnModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Lti(_) => "lti",
            Model::Gr(_) => "gr-ssnn",
            Model::Al(_) => "al-ssnn",
        }
    }
}

impl StateSpaceModel for Model {
    fn linear(&self) -> &LinearSS {
        match self {
            Model::Lti(m) => m,
            Model::Gr(m) => &m.lin,
            Model::Al(m) => &m.lin,
        }
    }

    fn step_raw(&self, x: &[f64], u: &[f64]) -> Vector {
        match self {
            Model::Lti(m) => m.step_raw(x, u),
            Model::Gr(m) => m.step_raw(x, u),
            Model::Al(m) => m.step_raw(x, u),
        }
    }
}

/// Free-run state and output sequences.
///
/// `x` is `n × (K+1)` (including the initial state) and `y` is `p × K`. When
/// `diverged_at` is set the run stopped early and `K` is smaller than the
/// input length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Mat,
    pub y: Mat,
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Turns a flagged divergence into an error.
    pub fn require_finite(self) -> Result<Self> {
        match self.diverged_at {
            Some(step) => Err(Error::Divergence { step }),
            None => Ok(self),
        }
    }
}

/// Simulates from `x0` under the input columns of `u` (`m × N`).
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, u: &Mat, x0: &Vector) -> Result<Trajectory> {
    simulate_with_bound(model, u, x0, DEFAULT_DIVERGENCE_BOUND)
}

pub fn simulate_with_bound<M: StateSpaceModel + ?Sized>(
    model: &M,
    u: &Mat,
    x0: &Vector,
    bound: f64,
) -> Result<Trajectory> {
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    if u.nrows() != m {
        return Err(dim_err!("input sequence has dimension {}, model expects {m}", u.nrows()));
    }
    if x0.len() != n {
        return Err(dim_err!("initial state has length {}, model expects {n}", x0.len()));
    }
    if u.ncols() == 0 {
        return Err(Error::InvalidArgument("input sequence is empty".into()));
    }
    let steps = u.ncols();
    let mut x = Mat::zeros(n, steps + 1);
    let mut y = Mat::zeros(p, steps);
    x.set_column(0, x0);
    let lin = model.linear();
    for k in 0..steps {
        let xk: Vec<f64> = x.column(k).iter().copied().collect();
        lin.output_into(&xk, y.column_mut(k).as_mut_slice());
        let uk: Vec<f64> = u.column(k).iter().copied().collect();
        let next = model.step_raw(&xk, &uk);
        let norm = crate::linalg::norm(next.as_slice());
        if !(norm <= bound) {
            return Ok(Trajectory {
                x: x.columns(0, k + 1).into_owned(),
                y: y.columns(0, k).into_owned(),
                diverged_at: Some(k + 1),
            });
        }
        x.set_column(k + 1, &next);
    }
    Ok(Trajectory { x, y, diverged_at: None })
}
