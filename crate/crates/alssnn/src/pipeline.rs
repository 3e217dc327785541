//! Run files: one JSON document describing data, models and analyses.
//!
//! ```json
//! {
//!   "data": {"generate": {"generator": "prey-predator", "n": 10000}},
//!   "train_fraction": 0.5,
//!   "normalize": true,
//!   "models": [
//!     {"name": "lti", "family": "lti", "order": 3},
//!     {"name": "al", "family": "al-ssnn", "order": 3, "gamma": [0.5, 2.0],
//!      "config": {"max_iters": 300, "max_spectral_radius": 0.99}}
//!   ],
//!   "closedloop": true,
//!   "certify": {}
//! }
//! ```
//!
//! Every report is a pure function of the run file. Wall-clock times go to
//! `timing.json` only.

use std::path::{Path, PathBuf};
use std::time::Instant;

use alssnn_core::training::TrainConfig;
use alssnn_core::Dataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, CertifyOptions, Family, IdentifyOptions, Split};
use crate::csvio::load_csv;
use crate::error::{AppError, AppResult};
use crate::generate::{write_generated, GeneratorSpec};
use crate::jsonio;
use crate::modelio::ModelFile;
use crate::report::{
    self, table, CertificateFile, CertifyReport, ClosedLoopReport, ConvergenceSummary, IdentifyReport, SweepRow,
};

pub const SUMMARY_FORMAT: &str = "alssnn-run-summary/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSource {
    #[serde(flatten)]
    pub spec: GeneratorSpec,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Generate(GenerateSource),
    Path(PathBuf),
}

fn default_fraction() -> f64 {
    0.5
}

fn default_n_f() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub family: Family,
    pub order: usize,
    /// One model per value; empty uses `config.gamma`.
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default = "default_n_f")]
    pub n_f: usize,
    #[serde(default)]
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    /// Relative to the run file; the command line may override it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub normalize: bool,
    pub models: Vec<ModelEntry>,
    /// Closed-loop analysis for every AL-SSNN model.
    #[serde(default)]
    pub closedloop: bool,
    /// Certification for every AL-SSNN model.
    #[serde(default)]
    pub certify: Option<CertifyOptions>,
}

impl RunFile {
    pub fn load(path: &Path) -> AppResult<Self> {
        let run: Self = jsonio::read(path)?;
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> AppResult<()> {
        if self.models.is_empty() {
            return Err(AppError::Usage("run file lists no models".into()));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(AppError::Usage(format!("model name `{}` appears twice", w[0])));
        }
        if let Some(m) = self.models.iter().find(|m| {
            m.name.is_empty() || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        }) {
            return Err(AppError::Usage(format!("model name `{}` must be non-empty [A-Za-z0-9._-]", m.name)));
        }
        if let Some(m) = self.models.iter().find(|m| m.order == 0) {
            return Err(AppError::Usage(format!("model `{}`: order must be positive", m.name)));
        }
        Ok(())
    }
}

/// One trained model of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub stem: String,
    pub family: Family,
    #[serde(flatten)]
    pub sweep: SweepRow,
    pub closedloop_ratio_mean: Option<f64>,
    pub certificate_valid: Option<bool>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub data: String,
    pub samples: usize,
    pub rows: Vec<SummaryRow>,
}

impl RunSummary {
    pub fn text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let flag = |b: Option<bool>| b.map_or("-".to_string(), |b| if b { "yes" } else { "no" }.to_string());
                vec![
                    r.stem.clone(),
                    r.family.tag().to_string(),
                    report::sci(r.sweep.rmse_train),
                    report::sci(r.sweep.rmse_test),
                    r.sweep.g_ratio_mean.map_or("-".into(), report::sci),
                    r.closedloop_ratio_mean.map_or("-".into(), report::sci),
                    flag(r.certificate_valid),
                    flag(r.converged),
                ]
            })
            .collect();
        format!(
            "{} ({} samples)\n\n{}",
            self.data,
            self.samples,
            table(&["model", "family", "rmse train", "rmse test", "residual ratio", "loop ratio", "lmi", "converged"], &rows)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stem: String,
    pub seconds: f64,
}

struct Job<'a> {
    stem: String,
    entry: &'a ModelEntry,
    config: TrainConfig,
}

/// Fraction of steps inside the ball required for `converged`.
pub const CONVERGED_FRACTION: f64 = 0.99;

/// Executes a run, writing every artifact below `out_dir`.
pub fn execute(run: &RunFile, base: &Path, out_dir: &Path) -> AppResult<RunSummary> {
    run.validate()?;
    let (ds, data_label): (Dataset, String) = match &run.data {
        DataSource::Generate(g) => {
            let ds = write_generated(&g.spec, g.n, g.seed, &out_dir.join("data.csv"))?;
            (ds, format!("{} (n = {}, seed {})", g.spec.name(), g.n, g.seed))
        }
        DataSource::Path(p) => {
            let path = base.join(p);
            (load_csv(&path)?, p.display().to_string())
        }
    };
    let split = Split::new(&ds, run.train_fraction, run.normalize)?;

    let jobs: Vec<Job> = run
        .models
        .iter()
        .flat_map(|entry| {
            let gammas = if entry.gamma.is_empty() { vec![entry.config.gamma] } else { entry.gamma.clone() };
            let sweep = gammas.len() > 1;
            gammas.into_iter().map(move |g| Job {
                stem: if sweep { format!("{}_g{g}", entry.name) } else { entry.name.clone() },
                entry,
                config: TrainConfig { gamma: g, ..entry.config.clone() },
            })
        })
        .collect();

    let results: Vec<AppResult<(SummaryRow, Timing)>> =
        jobs.par_iter().map(|job| run_job(run, job, &split, &data_label, out_dir)).collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut timing = Vec::with_capacity(results.len());
    for r in results {
        let (row, t) = r?;
        rows.push(row);
        timing.push(t);
    }
    let summary = RunSummary { format: SUMMARY_FORMAT.into(), data: data_label, samples: ds.len(), rows };
    report::write_pair(out_dir, "summary", &summary, &summary.text())?;
    jsonio::write(&out_dir.join("timing.json"), &timing)?;
    Ok(summary)
}

fn run_job(run: &RunFile, job: &Job, split: &Split, data: &str, out_dir: &Path) -> AppResult<(SummaryRow, Timing)> {
    let started = Instant::now();
    let entry = job.entry;
    let opts = IdentifyOptions { family: entry.family, order: entry.order, n_f: entry.n_f, config: job.config.clone() };
    let id = analysis::identify(split, &opts, &mut ())?;
    let metrics = analysis::evaluate(&id.model, split, None)?;
    ModelFile::new(&id.model, split.scaling.as_ref(), split.train_fraction)
        .save(out_dir.join(format!("{}.model.json", job.stem)))?;
    let rep = IdentifyReport {
        format: report::IDENTIFY_FORMAT.into(),
        name: job.stem.clone(),
        data: data.into(),
        train_fraction: split.train_fraction,
        normalize: split.scaling.is_some(),
        scaling: split.scaling.as_ref().map(crate::modelio::ScalingFile::from_core),
        samples_train: split.train.len(),
        samples_test: split.test.len(),
        options: opts,
        lti: id.lti.clone(),
        training: id.training.clone(),
        metrics: metrics.clone(),
    };
    report::write_pair(out_dir, &format!("{}.identify", job.stem), &rep, &rep.text())?;

    let mut row = SummaryRow {
        stem: job.stem.clone(),
        family: entry.family,
        sweep: SweepRow::new(&job.stem, id.training.as_ref(), &metrics),
        closedloop_ratio_mean: None,
        certificate_valid: None,
        converged: None,
    };
    if let alssnn_core::Model::Al(al) = &id.model {
        if run.closedloop {
            let (_, summary) = analysis::closed_loop(al, split)?;
            row.closedloop_ratio_mean = summary.ratio.map(|r| r.mean);
            let rep = ClosedLoopReport {
                format: report::CLOSED_LOOP_FORMAT.into(),
                name: job.stem.clone(),
                data: data.into(),
                summary,
            };
            report::write_pair(out_dir, &format!("{}.closedloop", job.stem), &rep, &rep.text())?;
        }
        if let Some(copts) = &run.certify {
            let out = analysis::certify(al, split, copts)?;
            let rep = certify_report(&job.stem, data, al, &out);
            row.certificate_valid = Some(rep.certificate.valid);
            row.converged = Some(out.convergence.converged(CONVERGED_FRACTION));
            report::write_pair(out_dir, &format!("{}.certify", job.stem), &rep, &rep.text())?;
        }
    }
    Ok((row, Timing { stem: job.stem.clone(), seconds: started.elapsed().as_secs_f64() }))
}

pub fn certify_report(
    name: &str,
    data: &str,
    model: &alssnn_core::AlSsnnModel,
    out: &analysis::CertifyOutcome,
) -> CertifyReport {
    CertifyReport {
        format: report::CERTIFY_FORMAT.into(),
        name: name.into(),
        data: data.into(),
        spectral_radius: alssnn_core::linalg::spectral_radius(&model.lin.a),
        epsilon_from_data: out.epsilon_from_data,
        start_state: out.x0.iter().copied().collect(),
        certificate: CertificateFile::new(&out.certificate, &out.verification),
        convergence: ConvergenceSummary::new(&out.convergence),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_run_file() {
        let run: RunFile = serde_json::from_str(
            r#"{"data": {"generate": {"generator": "wh-synthetic", "n": 300, "seed": 4}},
                "models": [{"name": "lti", "family": "lti", "order": 2}]}"#,
        )
        .unwrap();
        assert_eq!(run.train_fraction, 0.5);
        assert!(matches!(&run.data, DataSource::Generate(g) if g.n == 300 && g.seed == 4));
        assert!(run.certify.is_none());
    }

    #[test]
    fn rejects_duplicate_names() {
        let run: RunFile = serde_json::from_str(
            r#"{"data": {"path": "d.csv"},
                "models": [{"name": "a", "family": "lti", "order": 2}, {"name": "a", "family": "lti", "order": 3}]}"#,
        )
        .unwrap();
        assert!(matches!(run.validate(), Err(AppError::Usage(_))));
    }

    #[test]
    fn lti_run_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let run: RunFile = serde_json::from_str(
            r#"{"data": {"generate": {"generator": "wh-synthetic", "n": 400, "seed": 2}},
                "models": [{"name": "lti", "family": "lti", "order": 2}]}"#,
        )
        .unwrap();
        let summary = execute(&run, dir.path(), dir.path()).unwrap();
        assert_eq!(summary.rows.len(), 1);
        for f in ["data.csv", "data.meta.json", "lti.model.json", "lti.identify.json", "lti.identify.txt", "summary.txt", "timing.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
