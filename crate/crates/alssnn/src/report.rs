//! Reports, each written as JSON and as a plain-text table.

use std::path::Path;

use alssnn_core::control::{RatioStats, RatioSummary};
use alssnn_core::iss::{ConvergenceReport, IssCertificate, Verification};
use alssnn_core::training::TrainReport;
use serde::{Deserialize, Serialize};

use crate::analysis::{ClosedLoopSummary, EvalMetrics, IdentifyOptions, LtiInfo};
use crate::error::AppResult;
use crate::jsonio;
use crate::modelio::ScalingFile;

/// Left-aligned first column, right-aligned others.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate().take(cols) {
            let pad = width[j] - c.chars().count();
            if j == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_else(|| "-".into())
}

fn ratio_rows(label: &str, stats: &Option<RatioStats>) -> Vec<Vec<String>> {
    let Some(s) = stats else { return Vec::new() };
    let mut rows = Vec::new();
    let mut push = |name: &str, r: &Option<RatioSummary>| {
        if let Some(r) = r {
            rows.push(vec![format!("{name} ({label})"), sci(r.max), sci(r.mean)]);
        }
    };
    push("|f_n|/|Ax+Bu|", &s.f);
    push("|g_n|/|Ax+Bu|", &s.g);
    push("|h_n|/|Ax+Bu|", &s.h);
    rows
}

pub fn metrics_text(m: &EvalMetrics) -> String {
    let mut rows = vec![
        vec!["train".to_string(), sci(m.rmse_train), opt_sci(m.rmse_data_units.map(|d| d[0]))],
        vec!["test".to_string(), sci(m.rmse_test), opt_sci(m.rmse_data_units.map(|d| d[1]))],
        vec!["test (reset x=0)".to_string(), sci(m.rmse_test_reset), opt_sci(m.rmse_data_units.map(|d| d[2]))],
    ];
    let mut out = table(&["RMSE", "model units", "data units"], &rows);
    rows = ratio_rows("train", &m.ratios_train);
    rows.extend(ratio_rows("test", &m.ratios_test));
    if !rows.is_empty() {
        out.push('\n');
        out.push_str(&table(&["ratio", "max", "mean"], &rows));
    }
    out
}

pub const IDENTIFY_FORMAT: &str = "alssnn-identify-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub format: String,
    pub name: String,
    pub data: String,
    pub train_fraction: f64,
    pub normalize: bool,
    pub scaling: Option<ScalingFile>,
    pub samples_train: usize,
    pub samples_test: usize,
    pub options: IdentifyOptions,
    pub lti: Option<LtiInfo>,
    pub training: Option<TrainReport>,
    pub metrics: EvalMetrics,
}

impl IdentifyReport {
    pub fn text(&self) -> String {
        let mut out = format!(
            "{} ({}, order {}) on {}\ntrain/test samples: {}/{}{}\n\n",
            self.name,
            self.options.family.tag(),
            self.options.order,
            self.data,
            self.samples_train,
            self.samples_test,
            if self.normalize { ", standardized with training statistics" } else { "" }
        );
        if let Some(t) = &self.training {
            let c = &t.config;
            out.push_str(&format!(
                "gamma {}  n_h {}  n_g {}  max_iters {}  seed {}\n",
                c.gamma, c.n_h, c.n_g, c.max_iters, c.seed
            ));
            out.push_str(&format!(
                "loss {} -> {}  (output {}, penalty {})\niterations {} ({} accepted), stop: {:?}\n\n",
                sci(t.initial.total()),
                sci(t.final_loss.total()),
                sci(t.final_loss.output),
                sci(t.final_loss.penalty),
                t.iterations.len(),
                t.accepted_steps(),
                t.stop_reason
            ));
        }
        if let Some(l) = &self.lti {
            out.push_str(&format!("FIR horizon {}, Markov parameters from {:?}\n\n", l.horizon, l.markov_source));
        }
        out.push_str(&metrics_text(&self.metrics));
        out
    }
}

pub const EVAL_FORMAT: &str = "alssnn-eval-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub name: String,
    pub family: String,
    pub data: String,
    pub samples_train: usize,
    pub samples_test: usize,
    pub metrics: EvalMetrics,
}

impl EvalReport {
    pub fn text(&self) -> String {
        format!("{} ({}) on {}\n\n{}", self.name, self.family, self.data, metrics_text(&self.metrics))
    }

    /// One row per metric: `metric,split,max,mean` (RMSE rows use `value` in `mean`).
    pub fn csv(&self) -> String {
        let m = &self.metrics;
        let mut out = String::from("metric,split,max,mean\n");
        out.push_str(&format!("rmse,train,,{:?}\nrmse,test,,{:?}\nrmse,test_reset,,{:?}\n", m.rmse_train, m.rmse_test, m.rmse_test_reset));
        for (split, stats) in [("train", &m.ratios_train), ("test", &m.ratios_test)] {
            if let Some(s) = stats {
                for (name, r) in [("f_ratio", s.f), ("g_ratio", s.g), ("h_ratio", s.h)] {
                    if let Some(r) = r {
                        out.push_str(&format!("{name},{split},{:?},{:?}\n", r.max, r.mean));
                    }
                }
            }
        }
        out
    }
}

pub const CLOSED_LOOP_FORMAT: &str = "alssnn-closedloop-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub format: String,
    pub name: String,
    pub data: String,
    pub summary: ClosedLoopSummary,
}

impl ClosedLoopReport {
    pub fn text(&self) -> String {
        let s = &self.summary;
        let mut rows = vec![
            vec!["|Ax+Bv|".to_string(), sci(s.linear_norm.max), sci(s.linear_norm.mean)],
            vec!["|g_n(x, v-h_n(y))|".to_string(), sci(s.omega_norm.max), sci(s.omega_norm.mean)],
        ];
        if let Some(r) = s.ratio {
            rows.push(vec!["ratio".to_string(), sci(r.max), sci(r.mean)]);
        }
        let mut out = format!("{} closed loop on {} ({} steps)\n\n", self.name, self.data, s.steps);
        out.push_str(&table(&["quantity", "max", "mean"], &rows));
        out.push_str(&format!("\nepsilon {}\n", sci(s.epsilon)));
        if let Some(k) = s.diverged_at {
            out.push_str(&format!("diverged at step {k}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub format: String,
    pub p: Vec<Vec<f64>>,
    pub phi: f64,
    pub psi: f64,
    pub epsilon: f64,
    pub radius: f64,
    pub p_min_eig: f64,
    pub p_max_eig: f64,
    pub lmi_max_eig: f64,
    pub valid: bool,
}

impl CertificateFile {
    pub fn new(cert: &IssCertificate, v: &Verification) -> Self {
        Self {
            format: "alssnn-certificate/1".into(),
            p: cert.p.row_iter().map(|r| r.iter().copied().collect()).collect(),
            phi: cert.phi,
            psi: cert.psi,
            epsilon: cert.epsilon,
            radius: cert.radius,
            p_min_eig: v.p_min_eig,
            p_max_eig: v.p_max_eig,
            lmi_max_eig: v.lmi_max_eig,
            valid: v.valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub steps: usize,
    pub v_initial: f64,
    pub v_final: f64,
    pub radius: f64,
    pub entry_step: Option<usize>,
    pub fraction_inside_after_entry: f64,
    pub decrement_failures: usize,
    pub epsilon_violations: usize,
}

impl ConvergenceSummary {
    pub fn new(r: &ConvergenceReport) -> Self {
        Self {
            steps: r.disturbance_norm.len(),
            v_initial: r.lyapunov.first().copied().unwrap_or(0.0),
            v_final: r.lyapunov.last().copied().unwrap_or(0.0),
            radius: r.radius,
            entry_step: r.entry_step,
            fraction_inside_after_entry: r.fraction_inside_after_entry,
            decrement_failures: r.decrement_failures,
            epsilon_violations: r.epsilon_violations,
        }
    }
}

pub const CERTIFY_FORMAT: &str = "alssnn-certify-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub format: String,
    pub name: String,
    pub data: String,
    pub spectral_radius: f64,
    pub epsilon_from_data: bool,
    pub start_state: Vec<f64>,
    pub certificate: CertificateFile,
    pub convergence: ConvergenceSummary,
}

impl CertifyReport {
    pub fn text(&self) -> String {
        let c = &self.certificate;
        let v = &self.convergence;
        let rows = vec![
            vec!["rho(A)".to_string(), sci(self.spectral_radius)],
            vec![format!("epsilon ({})", if self.epsilon_from_data { "data" } else { "override" }), sci(c.epsilon)],
            vec!["phi".to_string(), sci(c.phi)],
            vec!["psi".to_string(), sci(c.psi)],
            vec!["radius psi*eps^2/phi".to_string(), sci(c.radius)],
            vec!["lambda_min(P)".to_string(), sci(c.p_min_eig)],
            vec!["lambda_max(P)".to_string(), sci(c.p_max_eig)],
            vec!["lambda_max(LMI)".to_string(), sci(c.lmi_max_eig)],
            vec!["valid".to_string(), c.valid.to_string()],
            vec!["V(x0)".to_string(), sci(v.v_initial)],
            vec!["V(x_end)".to_string(), sci(v.v_final)],
            vec!["entry step".to_string(), v.entry_step.map_or("-".into(), |k| k.to_string())],
            vec!["inside after entry".to_string(), format!("{:.4}", v.fraction_inside_after_entry)],
            vec!["decrement failures".to_string(), v.decrement_failures.to_string()],
            vec!["epsilon violations".to_string(), v.epsilon_violations.to_string()],
        ];
        format!("{} certificate on {}\n\n{}", self.name, self.data, table(&["quantity", "value"], &rows))
    }
}

/// One γ of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub gamma: f64,
    pub rmse_train: f64,
    pub rmse_test: f64,
    pub g_ratio_mean: Option<f64>,
    pub h_ratio_mean: Option<f64>,
    pub final_loss: f64,
    pub iterations: usize,
}

impl SweepRow {
    pub fn new(name: &str, training: Option<&TrainReport>, metrics: &EvalMetrics) -> Self {
        let ratios = metrics.ratios_train.as_ref();
        Self {
            name: name.into(),
            gamma: training.map_or(0.0, |t| t.config.gamma),
            rmse_train: metrics.rmse_train,
            rmse_test: metrics.rmse_test,
            g_ratio_mean: ratios.and_then(|r| r.g.or(r.f)).map(|r| r.mean),
            h_ratio_mean: ratios.and_then(|r| r.h).map(|r| r.mean),
            final_loss: training.map_or(0.0, |t| t.final_loss.total()),
            iterations: training.map_or(0, |t| t.iterations.len()),
        }
    }
}

pub fn sweep_text(rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.gamma),
                sci(r.rmse_train),
                sci(r.rmse_test),
                opt_sci(r.g_ratio_mean),
                opt_sci(r.h_ratio_mean),
                sci(r.final_loss),
                r.iterations.to_string(),
            ]
        })
        .collect();
    table(&["gamma", "rmse train", "rmse test", "mean g ratio", "mean h ratio", "loss", "iters"], &body)
}

/// Writes `<stem>.json` and `<stem>.txt`.
pub fn write_pair<T: Serialize>(dir: &Path, stem: &str, value: &T, text: &str) -> AppResult<()> {
    jsonio::write(&dir.join(format!("{stem}.json")), value)?;
    jsonio::write_text(&dir.join(format!("{stem}.txt")), text)
}
