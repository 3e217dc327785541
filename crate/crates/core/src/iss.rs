//! Quadratic ISS certificates `V(x) = xᵀPx` for `x₊ = Ax + ω`.
//!
//! A certificate `(P, φ, ψ)` is valid when `P ≻ 0` and
//!
//! ```text
//! [ AᵀPA + (φ−1)P   AᵀP    ]
//! [ PA              P − ψI ]  ≺ 0,
//! ```
//!
//! which gives `ΔV < −φ V + ψ‖ω‖²` for every `(x, ω) ≠ 0`. With `‖ω‖ ≤ ε` the
//! state enters the ball `xᵀPx ≤ ψε²/φ`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::control::ClosedLoopRecord;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{asymmetry, log_space, norm, solve_discrete_lyapunov, spectral_radius, sym_eig_extremes, Mat, Vector};

/// Strict definiteness margin.
pub const LMI_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IssCertificate {
    pub p: Mat,
    pub phi: f64,
    pub psi: f64,
    pub epsilon: f64,
    /// `ψε²/φ`
    pub radius: f64,
    pub lmi_max_eig: f64,
    pub p_min_eig: f64,
}

impl IssCertificate {
    /// Builds a certificate and fills in the radius and eigenvalue diagnostics.
    pub fn new(a: &Mat, p: Mat, phi: f64, psi: f64, epsilon: f64) -> Result<Self> {
        let block = lmi_block(a, &p, phi, psi)?;
        let (p_min_eig, _) = sym_eig_extremes(&p);
        let (_, lmi_max_eig) = sym_eig_extremes(&block);
        Ok(Self { p, phi, psi, epsilon, radius: psi * epsilon * epsilon / phi, lmi_max_eig, p_min_eig })
    }

    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        quad(&self.p, x)
    }
}

fn quad(p: &Mat, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

/// The `2n × 2n` block `[[AᵀPA + (φ−1)P, AᵀP], [PA, P − ψI]]`.
pub fn lmi_block(a: &Mat, p: &Mat, phi: f64, psi: f64) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || p.shape() != (n, n) {
        return Err(dim_err!("A is {:?}, P is {:?}", a.shape(), p.shape()));
    }
    let scale = p.amax().max(1.0);
    if asymmetry(p) > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument("P is not symmetric".into()));
    }
    let pa = p * a;
    let mut block = Mat::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(a.transpose() * &pa + p * (phi - 1.0)));
    block.view_mut((0, n), (n, n)).copy_from(&pa.transpose());
    block.view_mut((n, 0), (n, n)).copy_from(&pa);
    block.view_mut((n, n), (n, n)).copy_from(&(p - Mat::identity(n, n) * psi));
    Ok(block)
}

/// Eigenvalue diagnostics of a certificate check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub valid: bool,
    pub p_min_eig: f64,
    pub p_max_eig: f64,
    pub lmi_min_eig: f64,
    pub lmi_max_eig: f64,
    pub symmetric: bool,
}

/// Checks `P ≻ 0` and `block ≺ −tol·I` by symmetric eigendecomposition.
pub fn verify(cert: &IssCertificate, a: &Mat) -> Verification {
    verify_parts(a, &cert.p, cert.phi, cert.psi)
}

fn verify_parts(a: &Mat, p: &Mat, phi: f64, psi: f64) -> Verification {
    let (p_min_eig, p_max_eig) = if p.is_square() { sym_eig_extremes(p) } else { (f64::NAN, f64::NAN) };
    match lmi_block(a, p, phi, psi) {
        Ok(block) => {
            let (lmi_min_eig, lmi_max_eig) = sym_eig_extremes(&block);
            Verification {
                valid: p_min_eig > 0.0 && lmi_max_eig < -LMI_TOL && phi > 0.0 && psi > 0.0,
                p_min_eig,
                p_max_eig,
                lmi_min_eig,
                lmi_max_eig,
                symmetric: true,
            }
        }
        Err(_) => Verification {
            valid: false,
            p_min_eig,
            p_max_eig,
            lmi_min_eig: f64::NAN,
            lmi_max_eig: f64::NAN,
            symmetric: false,
        },
    }
}

/// Candidate grid for [`solve_certificate`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SearchConfig {
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_points: usize,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_points: usize,
    /// Weight placed on one diagonal entry of `Q` in the non-identity members of the family.
    pub q_emphasis: f64,
    /// Also try the smallest feasible `ψ` for each `(P, φ)`.
    pub refine_psi: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            phi_min: 1e-4,
            phi_max: 1.0 - 1e-4,
            phi_points: 40,
            psi_min: 1e-3,
            psi_max: 1e3,
            psi_points: 40,
            q_emphasis: 10.0,
            refine_psi: true,
        }
    }
}

impl SearchConfig {
    /// `{I} ∪ {diag(1,…,q_emphasis,…,1)}`.
    pub fn q_family(&self, n: usize) -> Vec<Mat> {
        let mut out = alloc::vec![Mat::identity(n, n)];
        if n > 1 || self.q_emphasis != 1.0 {
            for i in 0..n {
                let mut q = Mat::identity(n, n);
                q[(i, i)] = self.q_emphasis;
                out.push(q);
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let ok = self.phi_min > 0.0
            && self.phi_max <= 1.0
            && self.phi_min <= self.phi_max
            && self.psi_min > 0.0
            && self.psi_min <= self.psi_max
            && self.phi_points > 0
            && self.psi_points > 0
            && self.psi_max.is_finite()
            && self.q_emphasis > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid certificate search grid".into()))
        }
    }
}

/// Smallest `ψ` making the block negative definite for this `(P, φ)`, via the
/// Schur complement `ψ > λ_max(P − PA T⁻¹ AᵀP)`, `T = AᵀPA + (φ−1)P ≺ 0`.
fn minimal_psi(a: &Mat, p: &Mat, phi: f64) -> Option<f64> {
    let pa = p * a;
    let t = a.transpose() * &pa + p * (phi - 1.0);
    let neg_t = -&t;
    let chol = neg_t.cholesky()?;
    let x = chol.solve(&pa.transpose()); // (−T)⁻¹ AᵀP
    let schur = p + &pa * x;
    let (_, hi) = sym_eig_extremes(&schur);
    hi.is_finite().then_some(hi)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    q: usize,
    phi: f64,
    psi: f64,
    radius: f64,
    lmi_max_eig: f64,
    p_min_eig: f64,
}

/// Total order: radius ascending, then φ descending, then ψ ascending, then Q index.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    a.radius
        .total_cmp(&b.radius)
        .then(b.phi.total_cmp(&a.phi))
        .then(a.psi.total_cmp(&b.psi))
        .then(a.q.cmp(&b.q))
}

/// Searches Lyapunov-generated `P` and a `(φ, ψ)` grid for the verified
/// certificate with the smallest radius `ψε²/φ`.
pub fn solve_certificate(a: &Mat, epsilon: f64, cfg: &SearchConfig) -> Result<IssCertificate> {
    if !a.is_square() {
        return Err(dim_err!("A is {:?}", a.shape()));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be finite and non-negative".into()));
    }
    cfg.validate()?;
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    let n = a.nrows();
    let phis = log_space(cfg.phi_min, cfg.phi_max, cfg.phi_points);
    let psi_grid = log_space(cfg.psi_min, cfg.psi_max, cfg.psi_points);
    let mut ps = Vec::new();
    for q in cfg.q_family(n) {
        ps.push(solve_discrete_lyapunov(a, &q)?);
    }
    let mut best: Option<Candidate> = None;
    let mut least_bad: Option<Candidate> = None;
    for (qi, p) in ps.iter().enumerate() {
        for &phi in &phis {
            let mut psis = psi_grid.clone();
            if cfg.refine_psi {
                if let Some(psi0) = minimal_psi(a, p, phi) {
                    for margin in [1e-6, 1e-4, 1e-2] {
                        psis.push(psi0 * (1.0 + margin) + 1e-8);
                    }
                }
            }
            for &psi in &psis {
                let v = verify_parts(a, p, phi, psi);
                let cand = Candidate {
                    q: qi,
                    phi,
                    psi,
                    radius: psi * epsilon * epsilon / phi,
                    lmi_max_eig: v.lmi_max_eig,
                    p_min_eig: v.p_min_eig,
                };
                if v.valid {
                    if best.as_ref().map_or(true, |b| rank(&cand, b) == Ordering::Less) {
                        best = Some(cand);
                    }
                } else if least_bad.as_ref().map_or(true, |b| cand.lmi_max_eig < b.lmi_max_eig) {
                    least_bad = Some(cand);
                }
            }
        }
    }
    match best {
        Some(c) => {
            let cert = IssCertificate::new(a, ps[c.q].clone(), c.phi, c.psi, epsilon)?;
            debug_assert!(verify(&cert, a).valid);
            Ok(cert)
        }
        None => {
            let c = least_bad.expect("grid is non-empty");
            Err(Error::Infeasible { phi: c.phi, psi: c.psi, lmi_max_eig: c.lmi_max_eig, p_min_eig: c.p_min_eig })
        }
    }
}

/// `ψε²/φ`
pub fn invariant_radius(cert: &IssCertificate) -> f64 {
    cert.psi * cert.epsilon * cert.epsilon / cert.phi
}

/// Per-step evaluation of a closed-loop record against a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `V(x(k))` for every stored state.
    pub lyapunov: Vec<f64>,
    pub inside: Vec<bool>,
    /// `‖x(k+1) − A x(k)‖`, the disturbance seen by the certified linear part.
    pub disturbance_norm: Vec<f64>,
    /// Whether `ΔV ≤ −φV + ψ‖d‖²` held at step `k` (strict unless `x = d = 0`).
    pub decrement_holds: Vec<bool>,
    pub decrement_failures: usize,
    /// Steps where the disturbance exceeds the certificate's `ε`.
    pub epsilon_violations: usize,
    /// First index with `V ≤ radius`.
    pub entry_step: Option<usize>,
    /// Fraction of states at or after `entry_step` inside the ball.
    pub fraction_inside_after_entry: f64,
    pub radius: f64,
}

impl ConvergenceReport {
    /// Entered the ball with no ε or decrement violation and stayed inside for
    /// at least `min_fraction` of the remaining steps.
    pub fn converged(&self, min_fraction: f64) -> bool {
        self.epsilon_violations == 0
            && self.decrement_failures == 0
            && self.entry_step.is_some()
            && self.fraction_inside_after_entry >= min_fraction
    }
}

/// Evaluates the Lyapunov function along `record` and checks the ISS decrement.
///
/// The disturbance is taken as `x(k+1) − A x(k)`, which equals `ω(k)` when the
/// external input is zero and also absorbs `B v(k)` otherwise.
pub fn check_convergence(cert: &IssCertificate, a: &Mat, record: &ClosedLoopRecord) -> Result<ConvergenceReport> {
    let n = a.nrows();
    let x = &record.trajectory.x;
    if cert.p.shape() != (n, n) || x.nrows() != n {
        return Err(dim_err!("certificate, A and record state dimensions disagree"));
    }
    let states: Vec<Vec<f64>> = (0..x.ncols()).map(|k| x.column(k).iter().copied().collect()).collect();
    let lyapunov: Vec<f64> = states.iter().map(|s| cert.lyapunov(s)).collect();
    let radius = invariant_radius(cert);
    let inside: Vec<bool> = lyapunov.iter().map(|&v| v <= radius).collect();
    let mut disturbance_norm = Vec::new();
    let mut decrement_holds = Vec::new();
    // A tiny slack absorbs rounding when V and the bound are both near zero.
    let eps_slack = cert.epsilon * (1.0 + 1e-12) + 1e-15;
    let mut epsilon_violations = 0;
    for k in 0..states.len().saturating_sub(1) {
        let ax = a * Vector::from_column_slice(&states[k]);
        let d: Vec<f64> = states[k + 1].iter().zip(ax.iter()).map(|(n1, a1)| n1 - a1).collect();
        let dn = norm(&d);
        if dn > eps_slack {
            epsilon_violations += 1;
        }
        let lhs = lyapunov[k + 1] - lyapunov[k] + cert.phi * lyapunov[k] - cert.psi * dn * dn;
        let trivial = dn == 0.0 && states[k].iter().all(|v| *v == 0.0);
        decrement_holds.push(lhs < 0.0 || (trivial && lhs <= 0.0));
        disturbance_norm.push(dn);
    }
    let decrement_failures = decrement_holds.iter().filter(|b| !**b).count();
    let entry_step = inside.iter().position(|b| *b);
    let fraction_inside_after_entry = match entry_step {
        Some(e) => inside[e..].iter().filter(|b| **b).count() as f64 / (inside.len() - e) as f64,
        None => 0.0,
    };
    Ok(ConvergenceReport {
        lyapunov,
        inside,
        disturbance_norm,
        decrement_holds,
        decrement_failures,
        epsilon_violations,
        entry_step,
        fraction_inside_after_entry,
        radius,
    })
}
