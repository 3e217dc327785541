//! One-hidden-layer feed-forward networks with analytic Jacobians.
//!
//! A network computes `W_out·σ(W_in·z + b_in) + b_out`. The flat parameter
//! order used everywhere (Jacobian columns, serialization of gradients) is
//! `W_in` row-major, `b_in`, `W_out` row-major, `b_out`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, Vector};

/// Element-wise hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(a),
        }
    }

    /// Derivative expressed through the activation value `s = σ(a)`.
    #[inline]
    pub fn slope_from_value(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - s * s,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Dimensions of a network: input, hidden and output widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub d_in: usize,
    pub n_hidden: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    w_in: Mat,
    b_in: Vector,
    w_out: Mat,
    b_out: Vector,
    activation: Activation,
}

/// Hidden-layer values at one input, reused by the forward pass and both Jacobians.
#[derive(Debug, Clone)]
pub struct HiddenState {
    /// `σ(W_in z + b_in)`
    pub value: Vec<f64>,
    /// `σ'(W_in z + b_in)`
    pub slope: Vec<f64>,
}

impl Mlp {
    pub fn new(w_in: Mat, b_in: Vector, w_out: Mat, b_out: Vector, activation: Activation) -> Result<Self> {
        let h = w_in.nrows();
        if b_in.len() != h || w_out.ncols() != h || b_out.len() != w_out.nrows() {
            return Err(dim_err!(
                "mlp: W_in {}x{}, b_in {}, W_out {}x{}, b_out {}",
                w_in.nrows(),
                w_in.ncols(),
                b_in.len(),
                w_out.nrows(),
                w_out.ncols(),
                b_out.len()
            ));
        }
        let net = Self { w_in, b_in, w_out, b_out, activation };
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mlp parameters must be finite".into()));
        }
        Ok(net)
    }

    /// The identically-zero map with all-zero parameters.
    pub fn zeros(dims: MlpDims) -> Self {
        Self {
            w_in: Mat::zeros(dims.n_hidden, dims.d_in),
            b_in: Vector::zeros(dims.n_hidden),
            w_out: Mat::zeros(dims.d_out, dims.n_hidden),
            b_out: Vector::zeros(dims.d_out),
            activation: Activation::Tanh,
        }
    }

    /// Seeded initialization whose output layer is scaled by `scale`.
    ///
    /// `W_in` and `b_in` are drawn from `U(−0.5, 0.5)`; `W_out` is `scale`
    /// times a `U(−0.5, 0.5)` draw and `b_out = 0`, so `scale = 0` gives the
    /// zero function while keeping the hidden layer generic.
    pub fn init_small(dims: MlpDims, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-0.5..0.5);
        let w_in = Mat::from_fn(dims.n_hidden, dims.d_in, |_, _| draw());
        let b_in = Vector::from_fn(dims.n_hidden, |_, _| draw());
        let w_out = Mat::from_fn(dims.d_out, dims.n_hidden, |_, _| scale * draw());
        Self {
            w_in,
            b_in,
            w_out,
            b_out: Vector::zeros(dims.d_out),
            activation: Activation::Tanh,
        }
    }

    pub fn dims(&self) -> MlpDims {
        MlpDims { d_in: self.w_in.ncols(), n_hidden: self.w_in.nrows(), d_out: self.w_out.nrows() }
    }

    pub fn d_in(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn w_in(&self) -> &Mat {
        &self.w_in
    }

    pub fn b_in(&self) -> &Vector {
        &self.b_in
    }

    pub fn w_out(&self) -> &Mat {
        &self.w_out
    }

    pub fn b_out(&self) -> &Vector {
        &self.b_out
    }

    pub fn set_b_out(&mut self, b_out: Vector) -> Result<()> {
        if b_out.len() != self.d_out() {
            return Err(dim_err!("b_out has length {}, expected {}", b_out.len(), self.d_out()));
        }
        self.b_out = b_out;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let d = self.dims();
        d.n_hidden * d.d_in + d.n_hidden + d.d_out * d.n_hidden + d.d_out
    }

    /// Offset of `b_out` within the flat parameter vector.
    pub fn b_out_offset(&self) -> usize {
        let d = self.dims();
        d.n_hidden * d.d_in + d.n_hidden + d.d_out * d.n_hidden
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for i in 0..self.w_in.nrows() {
            out.extend(self.w_in.row(i).iter());
        }
        out.extend(self.b_in.iter());
        for i in 0..self.w_out.nrows() {
            out.extend(self.w_out.row(i).iter());
        }
        out.extend(self.b_out.iter());
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(dim_err!("mlp expects {} parameters, got {}", self.param_count(), theta.len()));
        }
        let d = self.dims();
        let mut it = theta.iter().copied();
        for i in 0..d.n_hidden {
            for j in 0..d.d_in {
                self.w_in[(i, j)] = it.next().unwrap();
            }
        }
        for i in 0..d.n_hidden {
            self.b_in[i] = it.next().unwrap();
        }
        for i in 0..d.d_out {
            for j in 0..d.n_hidden {
                self.w_out[(i, j)] = it.next().unwrap();
            }
        }
        for i in 0..d.d_out {
            self.b_out[i] = it.next().unwrap();
        }
        Ok(())
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_in() {
            return Err(dim_err!("mlp input has length {}, expected {}", z.len(), self.d_in()));
        }
        Ok(())
    }

    /// Hidden activations and slopes at `z` (length not checked).
    pub(crate) fn hidden(&self, z: &[f64]) -> HiddenState {
        let h = self.w_in.nrows();
        let mut value = vec![0.0; h];
        let mut slope = vec![0.0; h];
        for i in 0..h {
            let mut a = self.b_in[i];
            for (j, zj) in z.iter().enumerate() {
                a += self.w_in[(i, j)] * zj;
            }
            let s = self.activation.eval(a);
            value[i] = s;
            slope[i] = self.activation.slope_from_value(s);
        }
        HiddenState { value, slope }
    }

    pub(crate) fn output_from_hidden(&self, hs: &HiddenState) -> Vector {
        let mut out = self.b_out.clone();
        for r in 0..self.d_out() {
            let mut acc = 0.0;
            for (i, s) in hs.value.iter().enumerate() {
                acc += self.w_out[(r, i)] * s;
            }
            out[r] += acc;
        }
        out
    }

    pub(crate) fn jac_input_from_hidden(&self, hs: &HiddenState) -> Mat {
        let (d_out, d_in) = (self.d_out(), self.d_in());
        let mut jac = Mat::zeros(d_out, d_in);
        for r in 0..d_out {
            for (i, sl) in hs.slope.iter().enumerate() {
                let w = self.w_out[(r, i)] * sl;
                if w == 0.0 {
                    continue;
                }
                for j in 0..d_in {
                    jac[(r, j)] += w * self.w_in[(i, j)];
                }
            }
        }
        jac
    }

    pub(crate) fn jac_params_from_hidden(&self, z: &[f64], hs: &HiddenState) -> Mat {
        let d = self.dims();
        let mut jac = Mat::zeros(d.d_out, self.param_count());
        let off_b_in = d.n_hidden * d.d_in;
        let off_w_out = off_b_in + d.n_hidden;
        let off_b_out = off_w_out + d.d_out * d.n_hidden;
        for r in 0..d.d_out {
            for i in 0..d.n_hidden {
                let w = self.w_out[(r, i)] * hs.slope[i];
                for j in 0..d.d_in {
                    jac[(r, i * d.d_in + j)] = w * z[j];
                }
                jac[(r, off_b_in + i)] = w;
                jac[(r, off_w_out + r * d.n_hidden + i)] = hs.value[i];
            }
            jac[(r, off_b_out + r)] = 1.0;
        }
        jac
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vector> {
        self.check_input(z)?;
        Ok(self.output_from_hidden(&self.hidden(z)))
    }

    /// `∂output/∂z = W_out·diag(σ'(W_in z + b_in))·W_in`.
    pub fn jac_input(&self, z: &[f64]) -> Result<Mat> {
        self.check_input(z)?;
        Ok(self.jac_input_from_hidden(&self.hidden(z)))
    }

    /// `∂output/∂θ` in the flat parameter order, `d_out × param_count`.
    pub fn jac_params(&self, z: &[f64]) -> Result<Mat> {
        self.check_input(z)?;
        Ok(self.jac_params_from_hidden(z, &self.hidden(z)))
    }

    /// Returns a copy whose output bias makes the network vanish at `z_e`.
    pub fn enforce_zero_at(&self, z_e: &[f64]) -> Result<Self> {
        self.check_input(z_e)?;
        let hs = self.hidden(z_e);
        let mut net = self.clone();
        net.b_out = -(&self.w_out * Vector::from_vec(hs.value));
        Ok(net)
    }
}

/// State/input operating point at which the residual network is pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x_e: Vector,
    pub u_e: Vector,
}

impl Equilibrium {
    pub fn origin(n: usize, m: usize) -> Self {
        Self { x_e: Vector::zeros(n), u_e: Vector::zeros(m) }
    }

    /// `[x_e; u_e]`
    pub fn stacked(&self) -> Vec<f64> {
        self.x_e.iter().chain(self.u_e.iter()).copied().collect()
    }
}

/// Replaces `b_out` so that `net(x_e, u_e) = 0`; all other parameters are kept.
pub fn enforce_equilibrium_zero(net: &Mlp, eq: &Equilibrium) -> Result<Mlp> {
    if net.d_in() != eq.x_e.len() + eq.u_e.len() {
        return Err(dim_err!(
            "network input dimension {} does not match equilibrium {}+{}",
            net.d_in(),
            eq.x_e.len(),
            eq.u_e.len()
        ));
    }
    net.enforce_zero_at(&eq.stacked())
}
