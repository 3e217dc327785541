//! Output-feedback linearizing law, closed-loop simulation and residual diagnostics.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{norm, Mat, Vector};
use crate::model::{simulate, AlSsnnModel, Model, StateSpaceModel, Trajectory, DEFAULT_DIVERGENCE_BOUND};

/// Steps whose linear part `‖Ax + Bu‖` falls below this are excluded from ratios.
pub const RATIO_GUARD: f64 = 1e-9;

/// `u = v − h_n(y)`.
pub fn linearizing_input(model: &AlSsnnModel, v: &[f64], y: &[f64]) -> Result<Vector> {
    if v.len() != model.m() || y.len() != model.p() {
        return Err(dim_err!("v/y of length ({}, {}), expected ({}, {})", v.len(), y.len(), model.m(), model.p()));
    }
    let h = model.h(y);
    Ok(Vector::from_iterator(v.len(), v.iter().zip(h.iter()).map(|(a, b)| a - b)))
}

/// Mean and max of one ratio over the non-excluded steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RatioSummary {
    pub mean: f64,
    pub max: f64,
}

/// Residual-to-linear ratios over a trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RatioStats {
    /// `‖g_n(x,u)‖ / ‖Ax+Bu‖` (AL-SSNN)
    pub g: Option<RatioSummary>,
    /// `‖h_n(y)‖ / ‖Ax+Bu‖` (AL-SSNN)
    pub h: Option<RatioSummary>,
    /// `‖f_n(x,u)‖ / ‖Ax+Bu‖` (GR-SSNN)
    pub f: Option<RatioSummary>,
    pub steps: usize,
    /// Steps dropped by the denominator guard.
    pub excluded: usize,
}

#[derive(Default)]
struct RatioAccumulator {
    sum: f64,
    max: f64,
    count: usize,
}

impl RatioAccumulator {
    fn push(&mut self, r: f64) {
        self.sum += r;
        self.max = self.max.max(r);
        self.count += 1;
    }

    fn finish(&self) -> RatioSummary {
        RatioSummary { mean: self.sum / self.count as f64, max: self.max }
    }
}

fn column(m: &Mat, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

/// Ratio statistics along stored states `x` (at least as many columns as `u`)
/// under inputs `u`.
pub fn ratio_stats_on(model: &Model, x: &Mat, u: &Mat) -> Result<RatioStats> {
    let lin = model.linear();
    if x.nrows() != lin.n() || u.nrows() != lin.m() || x.ncols() < u.ncols() {
        return Err(dim_err!("trajectory shapes {:?}/{:?} do not fit the model", x.shape(), u.shape()));
    }
    let mut g = RatioAccumulator::default();
    let mut h = RatioAccumulator::default();
    let mut f = RatioAccumulator::default();
    let mut excluded = 0;
    for k in 0..u.ncols() {
        let (xk, uk) = (column(x, k), column(u, k));
        let den = norm(lin.linear_part(&xk, &uk).as_slice());
        if !(den >= RATIO_GUARD) {
            excluded += 1;
            continue;
        }
        match model {
            Model::Lti(_) => {}
            Model::Gr(m) => f.push(norm(m.f(&xk, &uk).as_slice()) / den),
            Model::Al(m) => {
                g.push(norm(m.g(&xk, &uk).as_slice()) / den);
                h.push(norm(m.h(lin.output(&xk).as_slice()).as_slice()) / den);
            }
        }
    }
    if excluded == u.ncols() {
        return Err(Error::Numerical(format!(
            "all {} steps have ‖Ax+Bu‖ below {RATIO_GUARD:e}; ratios undefined",
            u.ncols()
        )));
    }
    let some = |a: &RatioAccumulator| (a.count > 0).then(|| a.finish());
    Ok(RatioStats { g: some(&g), h: some(&h), f: some(&f), steps: u.ncols(), excluded })
}

/// Ratio statistics along the free-run simulation on `ds` from `x(0) = 0`.
pub fn ratio_stats(model: &Model, ds: &Dataset) -> Result<RatioStats> {
    let traj = free_run(model, ds)?;
    ratio_stats_on(model, &traj.x, ds.inputs())
}

fn free_run<M: StateSpaceModel + ?Sized>(model: &M, ds: &Dataset) -> Result<Trajectory> {
    if ds.input_dim() != model.input_dim() || ds.output_dim() != model.output_dim() {
        return Err(dim_err!(
            "dataset has (m, p) = ({}, {}), model expects ({}, {})",
            ds.input_dim(),
            ds.output_dim(),
            model.input_dim(),
            model.output_dim()
        ));
    }
    simulate(model, ds.inputs(), &Vector::zeros(model.state_dim()))?.require_finite()
}

/// `sqrt((1/N) Σ ‖y(k) − y_θ(k)‖²)` of the free run from `x(0) = 0`.
pub fn rmse<M: StateSpaceModel + ?Sized>(model: &M, ds: &Dataset) -> Result<f64> {
    let traj = free_run(model, ds)?;
    let ss = (ds.outputs() - &traj.y).iter().fold(0.0, |a, e| a + e * e);
    Ok(libm::sqrt(ss / ds.len() as f64))
}

/// RMSE on `ds` of a single free run over `prefix` followed by `ds`.
///
/// The state entering `ds` is the model's own state after `prefix`, so a
/// test record that continues a training record is scored without an
/// artificial reset to `x = 0` at its first sample.
pub fn rmse_after<M: StateSpaceModel + ?Sized>(model: &M, prefix: &Dataset, ds: &Dataset) -> Result<f64> {
    let full = prefix.concat(ds)?;
    let traj = free_run(model, &full)?;
    let err = full.outputs().columns(prefix.len(), ds.len()) - traj.y.columns(prefix.len(), ds.len());
    Ok(libm::sqrt(err.norm_squared() / ds.len() as f64))
}

/// Closed-loop run of `x₊ = Ax + Bv + ω`, `ω = g_n(x, v − h_n(Cx))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub trajectory: Trajectory,
    /// External input, `m × K`.
    pub v: Mat,
    /// Applied plant input `v − h_n(y)`, `m × K`.
    pub u: Mat,
    /// Disturbance `ω(k)`, `n × K`.
    pub omega: Mat,
    /// `‖Ax(k) + Bv(k)‖`
    pub linear_norm: Vec<f64>,
    /// `‖ω(k)‖`
    pub omega_norm: Vec<f64>,
    /// `‖ω‖ / ‖Ax+Bv‖` over the non-excluded steps; `None` when all are excluded.
    pub ratio: Option<RatioSummary>,
    pub excluded: usize,
}

impl ClosedLoopRecord {
    pub fn max_omega(&self) -> f64 {
        self.omega_norm.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.omega.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Simulates the linearized closed loop under `v_seq` (`m × K`) from `x0`.
///
/// Divergence is flagged on the trajectory, and the record then stops at the
/// last finite state.
pub fn simulate_closed_loop(model: &AlSsnnModel, v_seq: &Mat, x0: &Vector) -> Result<ClosedLoopRecord> {
    let (n, m, p) = (model.n(), model.m(), model.p());
    if v_seq.nrows() != m {
        return Err(dim_err!("v has dimension {}, model expects {m}", v_seq.nrows()));
    }
    if x0.len() != n {
        return Err(dim_err!("initial state has length {}, model expects {n}", x0.len()));
    }
    if v_seq.ncols() == 0 {
        return Err(Error::InvalidArgument("input sequence is empty".into()));
    }
    let steps = v_seq.ncols();
    let mut x = Mat::zeros(n, steps + 1);
    let mut y = Mat::zeros(p, steps);
    let mut u = Mat::zeros(m, steps);
    let mut omega = Mat::zeros(n, steps);
    let mut linear_norm = Vec::with_capacity(steps);
    let mut omega_norm = Vec::with_capacity(steps);
    x.set_column(0, x0);
    let mut diverged_at = None;
    let mut done = steps;
    for k in 0..steps {
        let xk = column(&x, k);
        let vk = column(v_seq, k);
        let yk = model.lin.output(&xk);
        let uk = linearizing_input(model, &vk, yk.as_slice())?;
        let w = model.g(&xk, uk.as_slice());
        let lin = model.lin.linear_part(&xk, &vk);
        let next = &lin + &w;
        y.set_column(k, &yk);
        u.set_column(k, &uk);
        omega.set_column(k, &w);
        linear_norm.push(norm(lin.as_slice()));
        omega_norm.push(norm(w.as_slice()));
        if !(norm(next.as_slice()) <= DEFAULT_DIVERGENCE_BOUND) {
            diverged_at = Some(k + 1);
            done = k + 1;
            break;
        }
        x.set_column(k + 1, &next);
    }
    let x = if diverged_at.is_some() { x.columns(0, done).into_owned() } else { x };
    let trim = |mat: Mat| mat.columns(0, done).into_owned();
    let mut acc = RatioAccumulator::default();
    let mut excluded = 0;
    for (w, l) in omega_norm.iter().zip(&linear_norm) {
        if *l >= RATIO_GUARD {
            acc.push(w / l);
        } else {
            excluded += 1;
        }
    }
    Ok(ClosedLoopRecord {
        trajectory: Trajectory { x, y: trim(y), diverged_at },
        v: trim(v_seq.clone()),
        u: trim(u),
        omega: trim(omega),
        linear_norm,
        omega_norm,
        ratio: (acc.count > 0).then(|| acc.finish()),
        excluded,
    })
}

/// Data-driven bound `ε ≥ ‖ω‖`: the max of `‖g_n(x(k), u(k))‖` along the free
/// runs on `datasets` and of `‖ω(k)‖` in `records`.
pub fn estimate_epsilon(model: &AlSsnnModel, datasets: &[&Dataset], records: &[&ClosedLoopRecord]) -> Result<f64> {
    if datasets.is_empty() && records.is_empty() {
        return Err(Error::InvalidArgument("epsilon needs at least one dataset or closed-loop record".into()));
    }
    let mut eps: f64 = 0.0;
    for ds in datasets {
        let traj = free_run(model, ds)?;
        for k in 0..ds.len() {
            let g = model.g(&column(&traj.x, k), &column(ds.inputs(), k));
            eps = eps.max(norm(g.as_slice()));
        }
    }
    for rec in records {
        eps = eps.max(rec.max_omega());
    }
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Equilibrium, Mlp, MlpDims};
    use crate::model::LinearSS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64, c: f64) -> LinearSS {
        LinearSS::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, b), Mat::from_element(1, 1, c)).unwrap()
    }

    fn constant_net(d_in: usize, d_out: usize, value: f64) -> Mlp {
        let mut net = Mlp::zeros(MlpDims { d_in, n_hidden: 1, d_out });
        net.set_b_out(Vector::from_element(d_out, value)).unwrap();
        net
    }

    fn random_model(seed: u64) -> AlSsnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: f64| rng.random_range(-s..s);
        let lin = LinearSS::new(
            Mat::from_fn(2, 2, |i, j| if i == j { 0.6 } else { 0.0 } + r(0.1)),
            Mat::from_fn(2, 1, |_, _| r(1.0)),
            Mat::from_fn(1, 2, |_, _| r(1.0)),
        )
        .unwrap();
        let mut model = AlSsnnModel::from_linear(lin, 3, 4, 0.4, seed, true);
        model.h_net.set_b_out(Vector::from_element(1, r(0.2))).unwrap();
        model
    }

    fn random_ds(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Mat::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
        Dataset::new("r", 1.0, u, y).unwrap()
    }

    #[test]
    fn linearizing_input_cases() {
        let mut model = AlSsnnModel::from_linear(scalar(0.5, 1.0, 1.0), 2, 2, 0.0, 1, true);
        assert_eq!(linearizing_input(&model, &[0.7], &[3.0]).unwrap()[0], 0.7);
        model.h_net = constant_net(1, 1, 0.3);
        assert!((linearizing_input(&model, &[0.0], &[3.0]).unwrap()[0] + 0.3).abs() < 1e-15);
        assert!(linearizing_input(&model, &[0.0, 1.0], &[3.0]).is_err());
    }

    #[test]
    fn cancellation_identity() {
        for seed in 0..50 {
            let model = random_model(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let v = [rng.random_range(-2.0..2.0)];
            let y = model.lin.output(&x);
            let u = linearizing_input(&model, &v, y.as_slice()).unwrap();
            let lhs = model.step(&x, u.as_slice()).unwrap();
            let rhs = model.lin.linear_part(&x, &v) + model.g(&x, u.as_slice());
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn closed_loop_matches_online_open_loop() {
        let model = random_model(3);
        let v = random_ds(50, 4).inputs().clone();
        let x0 = Vector::from_vec(alloc::vec![0.3, -0.2]);
        let rec = simulate_closed_loop(&model, &v, &x0).unwrap();
        let mut x = x0.as_slice().to_vec();
        for k in 0..50 {
            let row = rec.trajectory.x.column(k);
            assert!(x.iter().zip(row.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
            let y = model.lin.output(&x);
            let u = linearizing_input(&model, &[v[(0, k)]], y.as_slice()).unwrap();
            // ω is recomputable from the stored state and input.
            let w = model.g(&column(&rec.trajectory.x, k), &[rec.u[(0, k)]]);
            assert!((w - rec.omega.column(k)).amax() < 1e-12);
            x = model.step(&x, u.as_slice()).unwrap().as_slice().to_vec();
        }
    }

    #[test]
    fn zero_g_closed_loop_is_linear() {
        let mut model = random_model(5);
        model.g_net = Mlp::zeros(model.g_net.dims());
        let v = random_ds(30, 6).inputs().clone();
        let rec = simulate_closed_loop(&model, &v, &Vector::zeros(2)).unwrap();
        let lin = simulate(&model.lin, &v, &Vector::zeros(2)).unwrap();
        assert_eq!(rec.trajectory.x, lin.x);
        assert_eq!(rec.max_omega(), 0.0);
        assert_eq!(rec.ratio.unwrap().max, 0.0);
    }

    #[test]
    fn zero_v_at_fixed_point_stays_put() {
        let mut model = random_model(7);
        model.h_net = Mlp::zeros(model.h_net.dims());
        let rec = simulate_closed_loop(&model, &Mat::zeros(1, 20), &Vector::zeros(2)).unwrap();
        assert_eq!(rec.trajectory.x.amax(), 0.0);
        assert_eq!(rec.max_omega(), 0.0);
        assert_eq!(rec.excluded, 20);
        assert!(rec.ratio.is_none());
    }

    #[test]
    fn constant_g_ratio_by_hand() {
        // A=1, B=0, C=1, g ≡ 0.5, x(0)=1: x stays ≥ 1 and ‖Ax‖ = x.
        let lin = scalar(1.0, 0.0, 1.0);
        let model = AlSsnnModel::new(
            lin,
            Mlp::zeros(MlpDims { d_in: 1, n_hidden: 1, d_out: 1 }),
            constant_net(2, 1, 0.5),
            Equilibrium::origin(1, 1),
            false,
            true,
        )
        .unwrap();
        let x = Mat::from_element(1, 6, 1.0);
        let u = Mat::zeros(1, 5);
        let stats = ratio_stats_on(&Model::Al(model.clone()), &x, &u).unwrap();
        let g = stats.g.unwrap();
        assert_eq!((g.mean, g.max), (0.5, 0.5));
        assert_eq!(stats.h.unwrap().max, 0.0);
        assert!(stats.f.is_none());
        let zero_x = Mat::zeros(1, 6);
        assert!(ratio_stats_on(&Model::Al(model), &zero_x, &u).is_err());
    }

    #[test]
    fn family_dependent_ratio_rows() {
        let ds = random_ds(40, 8);
        let model = random_model(9);
        let lti = ratio_stats(&Model::Lti(model.lin.clone()), &ds).unwrap();
        assert!(lti.g.is_none() && lti.h.is_none() && lti.f.is_none());
        let gr = crate::model::GrSsnnModel::from_linear(model.lin.clone(), 3, 0.3, 2);
        let grs = ratio_stats(&Model::Gr(gr), &ds).unwrap();
        assert!(grs.f.is_some() && grs.g.is_none());
        let al = ratio_stats(&Model::Al(model), &ds).unwrap();
        let g = al.g.unwrap();
        assert!(g.mean <= g.max && g.mean >= 0.0);
    }

    #[test]
    fn rmse_identities() {
        let model = random_model(10);
        let ds = random_ds(60, 11);
        let r = rmse(&model, &ds).unwrap();
        let l = crate::training::loss(&model, &ds, 0.0).unwrap();
        assert!((r - libm::sqrt(l)).abs() < 1e-13);
        let zero = scalar(0.0, 0.0, 0.0);
        assert!((rmse(&zero, &ds).unwrap() - ds.output_rms()).abs() < 1e-15);
        let tr = simulate(&model, ds.inputs(), &Vector::zeros(2)).unwrap();
        let perfect = Dataset::new("p", 1.0, ds.inputs().clone(), tr.y).unwrap();
        assert_eq!(rmse(&model, &perfect).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_rules() {
        let ds = random_ds(60, 12);
        let mut model = random_model(13);
        assert!(estimate_epsilon(&model, &[], &[]).is_err());
        let (a, b) = crate::data::split(&ds, crate::data::SplitSpec::new(0.5).unwrap()).unwrap();
        let e_train = estimate_epsilon(&model, &[&a], &[]).unwrap();
        let e_all = estimate_epsilon(&model, &[&a, &b], &[]).unwrap();
        assert!(e_all >= e_train && e_train > 0.0);
        let rec = simulate_closed_loop(&model, ds.inputs(), &Vector::zeros(2)).unwrap();
        assert!(estimate_epsilon(&model, &[&a], &[&rec]).unwrap() >= rec.max_omega());
        model.g_net = Mlp::zeros(model.g_net.dims());
        assert_eq!(estimate_epsilon(&model, &[&ds], &[]).unwrap(), 0.0);
    }

    #[test]
    fn single_step_epsilon_is_g_norm() {
        let lin = scalar(0.5, 1.0, 1.0);
        let model = AlSsnnModel::new(
            lin,
            Mlp::zeros(MlpDims { d_in: 1, n_hidden: 1, d_out: 1 }),
            constant_net(2, 1, -0.25),
            Equilibrium::origin(1, 1),
            false,
            true,
        )
        .unwrap();
        let ds = Dataset::new("two", 1.0, Mat::zeros(1, 2), Mat::zeros(1, 2)).unwrap();
        assert_eq!(estimate_epsilon(&model, &[&ds], &[]).unwrap(), 0.25);
    }

    #[test]
    fn rmse_after_matches_tail_of_full_run() {
        let m = random_model(4);
        let ds = random_ds(40, 11);
        let (a, b) = crate::data::split(&ds, crate::data::SplitSpec::new(0.5).unwrap()).unwrap();
        let traj = simulate(&m, ds.inputs(), &Vector::zeros(m.n())).unwrap();
        let ss: f64 = (20..40).map(|k| (ds.outputs()[(0, k)] - traj.y[(0, k)]).powi(2)).sum();
        let want = (ss / 20.0).sqrt();
        assert!((rmse_after(&m, &a, &b).unwrap() - want).abs() < 1e-14);
    }
}
