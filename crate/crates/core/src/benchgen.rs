//! Benchmark data generators: a forced three-species prey-predator system and a
//! synthetic Wiener-Hammerstein cascade.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Mat, Vector};
use crate::model::{simulate, LinearSS};

/// Population blow-up threshold.
const POPULATION_BOUND: f64 = 1e8;

/// Coefficients of
///
/// ```text
/// ẋ₁ = a₁x₁ − b₁x₁x₂ − c₁x₁x₃ + d₁u₁²
/// ẋ₂ = a₂x₂ − b₂x₁x₂ − c₂x₁x₃ + d₂u₂²
/// ẋ₃ = −e x₃ + f x₁x₃ + g x₂x₃
/// ```
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreyPredatorParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    /// Sample period.
    pub dt: f64,
    /// RK4 steps per sample.
    pub substeps: usize,
    pub x0: [f64; 3],
}

impl Default for PreyPredatorParams {
    fn default() -> Self {
        Self {
            a1: 0.5,
            a2: 0.5,
            b1: 0.005,
            b2: 0.15,
            c1: 0.05,
            c2: 0.001,
            d1: 0.5,
            d2: 0.5,
            e: 0.8,
            f: 0.1,
            g: 0.01,
            dt: 0.3,
            substeps: 30,
            x0: [8.0, 3.0, 15.0],
        }
    }
}

impl PreyPredatorParams {
    fn validate(&self) -> Result<()> {
        let all = [
            self.a1, self.a2, self.b1, self.b2, self.c1, self.c2, self.d1, self.d2, self.e, self.f, self.g,
        ];
        if all.iter().chain(&self.x0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prey-predator parameters must be finite".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.substeps == 0 {
            return Err(Error::InvalidArgument("dt must be positive and substeps at least 1".into()));
        }
        Ok(())
    }

    fn rhs(&self, x: &[f64; 3], u: [f64; 2]) -> [f64; 3] {
        let [x1, x2, x3] = *x;
        [
            self.a1 * x1 - self.b1 * x1 * x2 - self.c1 * x1 * x3 + self.d1 * u[0] * u[0],
            self.a2 * x2 - self.b2 * x1 * x2 - self.c2 * x1 * x3 + self.d2 * u[1] * u[1],
            -self.e * x3 + self.f * x1 * x3 + self.g * x2 * x3,
        ]
    }
}

/// `u_i(t) = A_i sin(t + φ_i) + A_i sin(t/10 + φ_i)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SinusoidalForcing {
    pub amplitude: [f64; 2],
    pub phase: [f64; 2],
}

impl Default for SinusoidalForcing {
    fn default() -> Self {
        Self { amplitude: [2.0, 2.0], phase: [0.0, 1.0] }
    }
}

impl SinusoidalForcing {
    pub fn zero() -> Self {
        Self { amplitude: [0.0, 0.0], phase: [0.0, 0.0] }
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        let c = |i: usize| {
            let (a, p) = (self.amplitude[i], self.phase[i]);
            a * libm::sin(t + p) + a * libm::sin(t / 10.0 + p)
        };
        [c(0), c(1)]
    }
}

fn axpy3(x: &[f64; 3], h: f64, k: &[f64; 3]) -> [f64; 3] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2]]
}

/// One classical RK4 step of length `h` from time `t`.
fn rk4(p: &PreyPredatorParams, forcing: &SinusoidalForcing, x: &[f64; 3], t: f64, h: f64) -> [f64; 3] {
    let k1 = p.rhs(x, forcing.at(t));
    let k2 = p.rhs(&axpy3(x, h / 2.0, &k1), forcing.at(t + h / 2.0));
    let k3 = p.rhs(&axpy3(x, h / 2.0, &k2), forcing.at(t + h / 2.0));
    let k4 = p.rhs(&axpy3(x, h, &k3), forcing.at(t + h));
    let mut out = *x;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Sampled populations `x(t_k)`, `t_k = k·dt`, `k = 0..n`.
pub fn integrate_prey_predator(params: &PreyPredatorParams, forcing: &SinusoidalForcing, n: usize) -> Result<Vec<[f64; 3]>> {
    params.validate()?;
    let h = params.dt / params.substeps as f64;
    let mut x = params.x0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if x.iter().any(|v| !(v.abs() < POPULATION_BOUND)) {
            return Err(Error::Divergence { step: k });
        }
        out.push(x);
        let t0 = k as f64 * params.dt;
        for s in 0..params.substeps {
            x = rk4(params, forcing, &x, t0 + s as f64 * h, h);
        }
    }
    Ok(out)
}

/// `n` samples with inputs `(u₁, u₂)` and output the predator `x₃`.
pub fn simulate_prey_predator(params: &PreyPredatorParams, forcing: &SinusoidalForcing, n: usize) -> Result<Dataset> {
    let states = integrate_prey_predator(params, forcing, n)?;
    let u = Mat::from_fn(2, n, |i, k| forcing.at(k as f64 * params.dt)[i]);
    let y = Mat::from_fn(1, n, |_, k| states[k][2]);
    Dataset::new("prey-predator", params.dt, u, y)
}

/// Strictly proper SISO transfer function `(b₁z^{n−1} + … + bₙ) / (zⁿ + a₁z^{n−1} + … + aₙ)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransferFunction {
    /// `[b₁, …, bₙ]`
    pub num: Vec<f64>,
    /// `[a₁, …, aₙ]` (leading 1 implied)
    pub den: Vec<f64>,
}

impl TransferFunction {
    /// Second-order section with complex poles `r·e^{±iθ}` given as `re ± i·im`,
    /// zeros at `−1` and unit DC gain.
    pub fn second_order(re: f64, im: f64) -> Self {
        let (a1, a2) = (-2.0 * re, re * re + im * im);
        let half = (1.0 + a1 + a2) / 2.0;
        Self { num: vec![half, half], den: vec![a1, a2] }
    }

    pub fn order(&self) -> usize {
        self.den.len()
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> Result<LinearSS> {
        let n = self.order();
        if n == 0 || self.num.len() != n {
            return Err(Error::InvalidArgument(format!(
                "transfer function needs matching non-empty num/den, got {}/{}",
                self.num.len(),
                n
            )));
        }
        let mut a = Mat::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -self.den[j];
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Mat::zeros(n, 1);
        b[(0, 0)] = 1.0;
        let c = Mat::from_row_slice(1, n, &self.num);
        LinearSS::new(a, b, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum StaticNonlinearity {
    Identity,
    /// `c₁z + c₃z³`
    Polynomial { c1: f64, c3: f64 },
    /// `tanh(c₁z + c₃z³)`
    SaturatedPolynomial { c1: f64, c3: f64 },
}

impl StaticNonlinearity {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => z,
            Self::Polynomial { c1, c3 } => c1 * z + c3 * z * z * z,
            Self::SaturatedPolynomial { c1, c3 } => libm::tanh(c1 * z + c3 * z * z * z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WhParams {
    pub front: TransferFunction,
    pub nonlinearity: StaticNonlinearity,
    pub back: TransferFunction,
    pub noise_std: f64,
}

impl Default for WhParams {
    fn default() -> Self {
        Self {
            front: TransferFunction::second_order(0.7, 0.2),
            nonlinearity: StaticNonlinearity::SaturatedPolynomial { c1: 1.0, c3: 0.5 },
            back: TransferFunction::second_order(0.8, 0.1),
            noise_std: 1e-3,
        }
    }
}

/// Excitation of the Wiener-Hammerstein generator.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum WhInput {
    /// Gaussian white noise through `1/(1 − pole·z⁻¹)`, rescaled to standard deviation `std`.
    FilteredNoise { std: f64, pole: f64 },
    /// Sum of `harmonics` cosines of the base period `period` with random phases.
    Multisine { amplitude: f64, harmonics: usize, period: usize },
}

impl Default for WhInput {
    fn default() -> Self {
        Self::FilteredNoise { std: 1.0, pole: 0.5 }
    }
}

impl WhInput {
    fn generate(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match *self {
            Self::FilteredNoise { std, pole } => {
                if !(std >= 0.0 && std.is_finite() && pole.abs() < 1.0) {
                    return Err(Error::InvalidArgument("filtered noise needs std ≥ 0 and |pole| < 1".into()));
                }
                let gain = libm::sqrt(1.0 - pole * pole);
                let mut state = 0.0;
                Ok((0..n)
                    .map(|_| {
                        let w: f64 = rng.sample(StandardNormal);
                        state = pole * state + w;
                        std * gain * state
                    })
                    .collect())
            }
            Self::Multisine { amplitude, harmonics, period } => {
                if harmonics == 0 || period < 2 * harmonics || !amplitude.is_finite() {
                    return Err(Error::InvalidArgument("multisine needs 0 < harmonics ≤ period/2".into()));
                }
                let phases: Vec<f64> =
                    (0..harmonics).map(|_| rng.random_range(0.0..2.0 * core::f64::consts::PI)).collect();
                let scale = amplitude * libm::sqrt(2.0 / harmonics as f64);
                Ok((0..n)
                    .map(|k| {
                        let mut acc = 0.0;
                        for (h, ph) in phases.iter().enumerate() {
                            let w = 2.0 * core::f64::consts::PI * (h + 1) as f64 / period as f64;
                            acc += libm::cos(w * k as f64 + ph);
                        }
                        scale * acc
                    })
                    .collect())
            }
        }
    }
}

fn check_stable(name: &str, sys: &LinearSS) -> Result<()> {
    let rho = spectral_radius(&sys.a);
    if rho < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} block is not Schur stable (spectral radius {rho:.6})")))
    }
}

/// Wiener-Hammerstein record: front LTI, static map, back LTI, additive Gaussian output noise.
pub fn generate_wh(params: &WhParams, input: &WhInput, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    if !(params.noise_std >= 0.0 && params.noise_std.is_finite()) {
        return Err(Error::InvalidArgument("noise_std must be finite and non-negative".into()));
    }
    let front = params.front.to_state_space()?;
    let back = params.back.to_state_space()?;
    check_stable("front", &front)?;
    check_stable("back", &back)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Mat::from_row_slice(1, n, &input.generate(n, &mut rng)?);
    let z1 = simulate(&front, &u, &Vector::zeros(front.n()))?.require_finite()?.y;
    let z2 = z1.map(|z| params.nonlinearity.eval(z));
    let mut y = simulate(&back, &z2, &Vector::zeros(back.n()))?.require_finite()?.y;
    if params.noise_std > 0.0 {
        for v in y.iter_mut() {
            let w: f64 = rng.sample(StandardNormal);
            *v += params.noise_std * w;
        }
    }
    Dataset::new("wh-synthetic", 1.0, u, y)
}
