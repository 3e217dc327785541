//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use alssnn::analysis::{self, CertifyOptions, EvalMetrics, Family, IdentifyOptions, Identified, Split};
use alssnn::generate::GeneratorSpec;
use alssnn::pipeline::{self, RunFile};
use alssnn_core::iss::{lmi_block, solve_certificate, verify, IssCertificate, SearchConfig};
use alssnn_core::linalg::{spectral_radius, sym_eig_extremes};
use alssnn_core::sysid::linear_init;
use alssnn_core::training::{jacobian_bptt, loss, residuals, TrainConfig, TrainReport, Trainable};
use alssnn_core::{simulate, AlSsnnModel, Dataset, GrSsnnModel, LinearSS, Mat, Model, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, String>;

fn outcome(pass: bool, detail: String) -> Check {
    Ok(Outcome { pass, detail })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(budget: Duration, started: Instant) -> (bool, f64) {
    let s = started.elapsed().as_secs_f64();
    (started.elapsed() < budget, s)
}

// Random instances

fn stable_a(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let rho: f64 = rng.random_range(0.05..0.95);
    let r = spectral_radius(&a).max(1e-6);
    a * (rho / r)
}

fn random_al(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> AlSsnnModel {
    let a = stable_a(rng, n);
    let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let c = Mat::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    let lin = LinearSS::new(a, b, c).unwrap();
    let enforce = rng.random_bool(0.5);
    let mut model = AlSsnnModel::from_linear(lin, rng.random_range(2..6), rng.random_range(2..6), 0.5, rng.random(), enforce);
    let hb = Vector::from_fn(m, |_, _| rng.random_range(-0.3..0.3));
    model.h_net.set_b_out(hb).unwrap();
    if !enforce {
        let gb = Vector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
        model.g_net.set_b_out(gb).unwrap();
    }
    model
}

fn random_ds(rng: &mut ChaCha8Rng, big_n: usize, m: usize, p: usize) -> Dataset {
    let u = Mat::from_fn(m, big_n, |_, _| rng.random_range(-1.0..1.0));
    let y = Mat::from_fn(p, big_n, |_, _| rng.random_range(-1.0..1.0));
    Dataset::new("rand", 1.0, u, y).unwrap()
}

fn fd_jacobian<M: Trainable>(model: &M, ds: &Dataset, gamma: f64, cols: &[usize]) -> Mat {
    let h = 1e-6;
    let theta = model.params();
    let rows = residuals(model, ds, gamma).unwrap().r.len();
    let mut jac = Mat::zeros(rows, cols.len());
    for (c, &idx) in cols.iter().enumerate() {
        let (mut tp, mut tm) = (theta.clone(), theta.clone());
        tp[idx] += h;
        tm[idx] -= h;
        let (mut mp, mut mm) = (model.clone(), model.clone());
        mp.set_params(&tp).unwrap();
        mm.set_params(&tm).unwrap();
        let d = (residuals(&mp, ds, gamma).unwrap().r - residuals(&mm, ds, gamma).unwrap().r) / (2.0 * h);
        jac.set_column(c, &d);
    }
    jac
}

fn criterion_1() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..25 {
        let (n, m, p) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=2));
        let big_n = rng.random_range(5..=30);
        let gamma = rng.random_range(0.0..3.0);
        let ds = random_ds(&mut rng, big_n, m, p);
        let freeze_c = rng.random_bool(0.5);
        let err = if i % 5 == 4 {
            let lin = random_al(&mut rng, n, m, p).lin;
            let gr = GrSsnnModel::from_linear(lin, 4, 0.5, rng.random());
            let sel = gr.default_selection(freeze_c);
            let (_, jac) = jacobian_bptt(&gr, &ds, gamma, &sel).map_err(err)?;
            let fd = fd_jacobian(&gr, &ds, gamma, sel.indices());
            (&jac - &fd).amax() / fd.amax().max(1e-12)
        } else {
            let al = random_al(&mut rng, n, m, p);
            let sel = al.default_selection(freeze_c);
            let (_, jac) = jacobian_bptt(&al, &ds, gamma, &sel).map_err(err)?;
            let fd = fd_jacobian(&al, &ds, gamma, sel.indices());
            (&jac - &fd).amax() / fd.amax().max(1e-12)
        };
        worst = worst.max(err);
    }
    let (fast, secs) = within(Duration::from_secs(30), started);
    outcome(worst < 1e-5 && fast, format!("max relative error {worst:.2e} over 25 instances (< 1e-5), {secs:.1} s (< 30 s)"))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, m, p) = (rng.random_range(1..=4), rng.random_range(1..=2), rng.random_range(1..=2));
        let model = random_al(&mut rng, n, m, p);
        let big_n = rng.random_range(2..60);
        let ds = random_ds(&mut rng, big_n, m, p);
        let gamma = rng.random_range(0.0..10.0);
        let r = residuals(&model, &ds, gamma).map_err(err)?;
        let l = loss(&model, &ds, gamma).map_err(err)?;
        // Independent evaluation by stepping the model.
        let mut x = vec![0.0; n];
        let mut acc = 0.0;
        for k in 0..big_n {
            let u: Vec<f64> = ds.inputs().column(k).iter().copied().collect();
            let y = model.lin.output(&x);
            acc += (ds.outputs().column(k) - y).norm_squared() + gamma * model.g(&x, &u).norm_squared();
            x = model.step(&x, &u).map_err(err)?.as_slice().to_vec();
        }
        let direct = acc / big_n as f64;
        let from_r = r.r.norm_squared() / big_n as f64;
        let scale = l.abs().max(1.0);
        worst = worst.max((l - from_r).abs() / scale).max((l - direct).abs() / scale);
    }
    outcome(worst <= 1e-12, format!("max |J_N - |r|^2/N| = {worst:.2e} (relative, <= 1e-12) over 200 models"))
}

fn criterion_3() -> Check {
    let lin = LinearSS::new(
        Mat::from_row_slice(2, 2, &[0.7, 0.25, -0.3, 0.5]),
        Mat::from_row_slice(2, 1, &[1.0, 0.4]),
        Mat::from_row_slice(1, 2, &[1.0, -0.5]),
    )
    .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let u = Mat::from_fn(1, 2000, |_, _| rng.random_range(-1.0..1.0));
    let y = simulate(&lin, &u, &Vector::zeros(2)).map_err(err)?.y;
    let ds = Dataset::new("lin2", 1.0, u, y).map_err(err)?;
    let split = Split::new(&ds, 0.5, false).map_err(err)?;
    let model = linear_init(&split.train, 2, 80).map_err(err)?;
    // Free run over the whole record, scored on the held-out part.
    let full = simulate(&model, ds.inputs(), &Vector::zeros(2)).map_err(err)?.y;
    let n_test = split.test.len();
    let pred = full.columns(ds.len() - n_test, n_test);
    let rel = (split.test.outputs() - pred).norm() / split.test.outputs().norm();
    outcome(rel < 1e-6, format!("held-out relative RMSE {rel:.2e} (< 1e-6)"))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, m, p) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
        let model = random_al(&mut rng, n, m, p);
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = model.lin.output(&x);
            let h = model.h(y.as_slice());
            let u: Vec<f64> = v.iter().zip(h.iter()).map(|(a, b)| a - b).collect();
            let lhs = model.step(&x, &u).map_err(err)?;
            let rhs = model.lin.linear_part(&x, &v) + model.g(&x, &u);
            worst = worst.max((lhs - rhs).amax());
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over 10^4 (model, x, v) samples (<= 1e-12)"))
}

struct Experiment {
    id: Identified,
    metrics: EvalMetrics,
}

fn run_experiment(split: &Split, family: Family, order: usize, config: &TrainConfig) -> Result<Experiment, String> {
    let opts = IdentifyOptions { family, order, n_f: 10, config: config.clone() };
    let id = analysis::identify(split, &opts, &mut ()).map_err(err)?;
    let metrics = analysis::evaluate(&id.model, split, None).map_err(err)?;
    Ok(Experiment { id, metrics })
}

fn g_mean(m: &EvalMetrics) -> f64 {
    m.ratios_train.as_ref().and_then(|r| r.g).map_or(f64::NAN, |r| r.mean)
}

fn f_mean(m: &EvalMetrics) -> f64 {
    m.ratios_train.as_ref().and_then(|r| r.f).map_or(f64::NAN, |r| r.mean)
}

struct PreyPredator {
    split: Split,
    al: Experiment,
    gr: Experiment,
}

fn prey_predator_config() -> TrainConfig {
    TrainConfig { gamma: 2.0, max_iters: 300, seed: 1, n_h: 10, n_g: 10, max_spectral_radius: Some(0.99), ..TrainConfig::default() }
}

fn criterion_5(state: &mut Option<PreyPredator>) -> Check {
    let started = Instant::now();
    let ds = GeneratorSpec::prey_predator().generate(10_000, 0).map_err(err)?;
    let split = Split::new(&ds, 0.5, true).map_err(err)?;
    let config = prey_predator_config();
    let lti = run_experiment(&split, Family::Lti, 3, &config)?;
    let al = run_experiment(&split, Family::AlSsnn, 3, &config)?;
    let gr = run_experiment(&split, Family::GrSsnn, 3, &config)?;
    let ratio_a = al.metrics.rmse_test / lti.metrics.rmse_test;
    let ratio_b = g_mean(&al.metrics) / f_mean(&gr.metrics);
    let (fast, secs) = within(Duration::from_secs(15 * 60), started);
    let detail = format!(
        "(a) test RMSE AL {:.3e} / LTI {:.3e} = {ratio_a:.3} (<= 0.2); (b) g-ratio {:.3e} / GR f-ratio {:.3e} = {ratio_b:.3} (<= 0.1); {secs:.0} s",
        al.metrics.rmse_test,
        lti.metrics.rmse_test,
        g_mean(&al.metrics),
        f_mean(&gr.metrics)
    );
    *state = Some(PreyPredator { split, al, gr });
    outcome(ratio_a <= 0.2 && ratio_b <= 0.1 && fast, detail)
}

fn wh_config(gamma: f64) -> TrainConfig {
    TrainConfig { gamma, max_iters: 300, seed: 1, ..TrainConfig::default() }
}

fn wh_split() -> Result<Split, String> {
    let ds = GeneratorSpec::wh_synthetic().generate(8000, 1).map_err(err)?;
    Split::new(&ds, 0.5, false).map_err(err)
}

fn criterion_6(state: &mut Option<(Split, Experiment)>) -> Check {
    let started = Instant::now();
    let split = wh_split()?;
    let lti = run_experiment(&split, Family::Lti, 4, &wh_config(1.0))?;
    let al = run_experiment(&split, Family::AlSsnn, 4, &wh_config(1.0))?;
    let ratio = al.metrics.rmse_test / lti.metrics.rmse_test;
    let (fast, secs) = within(Duration::from_secs(15 * 60), started);
    let detail = format!(
        "test RMSE AL {:.3e} / LTI {:.3e} = {ratio:.3} (<= 0.2); {secs:.0} s",
        al.metrics.rmse_test, lti.metrics.rmse_test
    );
    *state = Some((split, al));
    outcome(ratio <= 0.2 && fast, detail)
}

fn criterion_7(wh: &Option<(Split, Experiment)>, runs: &mut Vec<Experiment>) -> Check {
    let (split, mid) = wh.as_ref().ok_or("criterion 6 did not produce the gamma = 1 run")?;
    let low = run_experiment(split, Family::AlSsnn, 4, &wh_config(0.01))?;
    let high = run_experiment(split, Family::AlSsnn, 4, &wh_config(100.0))?;
    let g = [g_mean(&low.metrics), g_mean(&mid.metrics), g_mean(&high.metrics)];
    let rmse = [low.metrics.rmse_test, mid.metrics.rmse_test, high.metrics.rmse_test];
    let spread = g[0] / g[2];
    let pass = g[0] > g[1] && g[1] > g[2] && rmse[0] < rmse[1] && rmse[1] < rmse[2] && spread >= 10.0;
    runs.push(low);
    runs.push(high);
    outcome(
        pass,
        format!(
            "gamma 0.01/1/100: g-ratio {:.3e} > {:.3e} > {:.3e}, test RMSE {:.3e} < {:.3e} < {:.3e}, spread {spread:.1}x (>= 10x)",
            g[0], g[1], g[2], rmse[0], rmse[1], rmse[2]
        ),
    )
}

fn criterion_8(pp: &Option<PreyPredator>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let cfg = SearchConfig::default();
    // (a), (b)
    let mut certs = 0;
    let mut invalid = 0;
    let mut positive = 0;
    for _ in 0..40 {
        let n = rng.random_range(1..=4);
        let a = stable_a(&mut rng, n);
        let eps = rng.random_range(0.01..5.0);
        let cert = solve_certificate(&a, eps, &cfg).map_err(err)?;
        certs += 1;
        if !verify(&cert, &a).valid {
            invalid += 1;
        }
        let block = lmi_block(&a, &cert.p, cert.phi, cert.psi).map_err(err)?;
        for _ in 0..10_000 {
            let z = Vector::from_fn(2 * n, |_, _| rng.random_range(-10.0..10.0));
            if (z.transpose() * &block * &z)[0] >= 0.0 {
                positive += 1;
            }
        }
    }
    let ab = invalid == 0 && positive == 0;

    // (c) scalar A = a: feasible points need phi < 1 - a^2.
    let mut boundary_ok = true;
    for k in 1..=9 {
        let a_val = k as f64 / 10.0;
        let a = Mat::from_element(1, 1, a_val);
        let bound = 1.0 - a_val * a_val;
        let cert = solve_certificate(&a, 1.0, &cfg).map_err(err)?;
        boundary_ok &= cert.phi < bound;
        for i in 0..20 {
            let phi = bound + (1.0 - bound) * i as f64 / 19.0;
            for p in [1e-2, 1.0, 1e2] {
                for psi in [1e-3, 1e-1, 1.0, 1e1, 1e3, 1e5] {
                    let c = IssCertificate::new(&a, Mat::from_element(1, 1, p), phi, psi, 1.0).map_err(err)?;
                    boundary_ok &= !verify(&c, &a).valid;
                }
            }
        }
        let inside = IssCertificate::new(&a, Mat::identity(1, 1), 0.5 * bound, 1e3, 1.0).map_err(err)?;
        boundary_ok &= verify(&inside, &a).valid;
    }

    // (d)
    let pp = pp.as_ref().ok_or("criterion 5 did not produce a model")?;
    let Model::Al(al) = &pp.al.id.model else { return Err("prey-predator model is not al-ssnn".into()) };
    let out = analysis::certify(al, &pp.split, &CertifyOptions::default()).map_err(err)?;
    let conv = &out.convergence;
    let d = out.verification.valid && conv.converged(0.99);
    let (_, p_max) = sym_eig_extremes(&out.certificate.p);
    outcome(
        ab && boundary_ok && d,
        format!(
            "(a) {invalid}/{certs} invalid; (b) {positive} non-negative forms in {} samples; (c) boundary respected: {boundary_ok}; \
             (d) eps {:.3e}, radius {:.3e}, V(x0) {:.3e}, lambda_max(P) {p_max:.2e}, entry step {:?}, inside {:.4} (>= 0.99), \
             eps violations {}, decrement failures {}",
            certs * 10_000,
            out.certificate.epsilon,
            out.certificate.radius,
            conv.lyapunov.first().copied().unwrap_or(f64::NAN),
            conv.entry_step,
            conv.fraction_inside_after_entry,
            conv.epsilon_violations,
            conv.decrement_failures
        ),
    )
}

fn determinism_run() -> RunFile {
    serde_json::from_str(
        r#"{
            "data": {"generate": {"generator": "prey-predator", "n": 1200}},
            "train_fraction": 0.5,
            "normalize": true,
            "models": [
                {"name": "lti", "family": "lti", "order": 3},
                {"name": "gr", "family": "gr-ssnn", "order": 3, "n_f": 6, "config": {"max_iters": 15, "seed": 4}},
                {"name": "al", "family": "al-ssnn", "order": 3, "gamma": [0.5, 2.0],
                 "config": {"max_iters": 15, "n_h": 6, "n_g": 6, "seed": 4, "max_spectral_radius": 0.99}}
            ],
            "closedloop": true,
            "certify": {"steps": 500}
        }"#,
    )
    .expect("run file parses")
}

fn listing(dir: &Path) -> Result<Vec<String>, String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(err)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(err))
        .collect::<Result<_, _>>()?;
    names.sort();
    Ok(names)
}

fn criterion_9() -> Check {
    let run = determinism_run();
    let tmp = tempfile::tempdir().map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline::execute(&run, tmp.path(), &a).map_err(err)?;
    pipeline::execute(&run, tmp.path(), &b).map_err(err)?;
    let names = listing(&a)?;
    if names != listing(&b)? {
        return outcome(false, "runs produced different file sets".into());
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for name in names.iter().filter(|n| *n != "timing.json") {
        compared += 1;
        if std::fs::read(a.join(name)).map_err(err)? != std::fs::read(b.join(name)).map_err(err)? {
            differing.push(name.clone());
        }
    }
    let kinds = ["data.csv", ".model.json", ".identify.json", ".certify.json"];
    let covered = kinds.iter().all(|k| names.iter().any(|n| n.ends_with(k)));
    outcome(
        differing.is_empty() && covered,
        format!("{compared} artifacts compared byte for byte (datasets, models, reports), differing: {differing:?}"),
    )
}

fn lm_contract(report: &TrainReport) -> (bool, bool) {
    let mut prev = report.initial.total();
    let mut decreasing = true;
    for it in report.iterations.iter().filter(|r| r.accepted) {
        decreasing &= it.loss < prev;
        prev = it.loss;
    }
    (decreasing, report.final_loss.total() <= report.initial.total())
}

fn criterion_10(runs: &[(&str, &Experiment)]) -> Check {
    if runs.is_empty() {
        return Err("no training runs from criteria 5-7".into());
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, e) in runs {
        let rep = e.id.training.as_ref().ok_or("run without training report")?;
        let (dec, below) = lm_contract(rep);
        pass &= dec && below;
        parts.push(format!("{name}: {} accepted, {:.3e} -> {:.3e}", rep.accepted_steps(), rep.initial.total(), rep.final_loss.total()));
        if !dec {
            parts.push(format!("{name}: accepted losses not strictly decreasing"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn report(index: usize, name: &str, result: Check, failures: &mut usize) {
    let (tag, detail) = match result {
        Ok(o) if o.pass => ("PASS", o.detail),
        Ok(o) => ("FAIL", o.detail),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    if tag == "FAIL" {
        *failures += 1;
    }
    println!("[{tag}] criterion {index:>2} {name}: {detail}");
}

fn main() {
    // Single-threaded, matching the runtime budgets.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("thread pool");
    let mut failures = 0;
    let started = Instant::now();
    report(1, "gradient correctness", criterion_1(), &mut failures);
    report(2, "loss identity", criterion_2(), &mut failures);
    report(3, "linear recovery", criterion_3(), &mut failures);
    report(4, "decomposition and cancellation", criterion_4(), &mut failures);
    let mut pp = None;
    report(5, "prey-predator experiment", criterion_5(&mut pp), &mut failures);
    let mut wh = None;
    report(6, "Wiener-Hammerstein experiment", criterion_6(&mut wh), &mut failures);
    let mut sweep = Vec::new();
    report(7, "gamma sweep ordering", criterion_7(&wh, &mut sweep), &mut failures);
    report(8, "LMI suite", criterion_8(&pp), &mut failures);
    report(9, "determinism", criterion_9(), &mut failures);
    let mut runs: Vec<(&str, &Experiment)> = Vec::new();
    if let Some(p) = &pp {
        runs.push(("pp al-ssnn", &p.al));
        runs.push(("pp gr-ssnn", &p.gr));
    }
    if let Some((_, e)) = &wh {
        runs.push(("wh gamma 1", e));
    }
    for (name, e) in ["wh gamma 0.01", "wh gamma 100"].into_iter().zip(&sweep) {
        runs.push((name, e));
    }
    report(10, "LM contract", criterion_10(&runs), &mut failures);
    println!("{} of 10 criteria passed in {:.0} s", 10 - failures, started.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
