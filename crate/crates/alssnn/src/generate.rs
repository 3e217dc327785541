//! Benchmark data generation with metadata sidecars.

use std::path::{Path, PathBuf};

use alssnn_core::benchgen::{generate_wh, simulate_prey_predator, PreyPredatorParams, SinusoidalForcing, WhInput, WhParams};
use alssnn_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::csvio::{save_csv, Header};
use crate::error::AppResult;
use crate::jsonio;

pub const META_FORMAT: &str = "alssnn-dataset-meta/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    PreyPredator {
        #[serde(default)]
        params: PreyPredatorParams,
        #[serde(default)]
        forcing: SinusoidalForcing,
    },
    WhSynthetic {
        #[serde(default)]
        params: WhParams,
        #[serde(default)]
        input: WhInput,
    },
}

impl GeneratorSpec {
    pub fn prey_predator() -> Self {
        GeneratorSpec::PreyPredator { params: PreyPredatorParams::default(), forcing: SinusoidalForcing::default() }
    }

    pub fn wh_synthetic() -> Self {
        GeneratorSpec::WhSynthetic { params: WhParams::default(), input: WhInput::default() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::PreyPredator { .. } => "prey-predator",
            GeneratorSpec::WhSynthetic { .. } => "wh-synthetic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "prey-predator" => Some(Self::prey_predator()),
            "wh-synthetic" => Some(Self::wh_synthetic()),
            _ => None,
        }
    }

    /// Whether `seed` influences the output (the prey-predator plant is deterministic).
    pub fn uses_seed(&self) -> bool {
        matches!(self, GeneratorSpec::WhSynthetic { .. })
    }

    pub fn generate(&self, n: usize, seed: u64) -> AppResult<Dataset> {
        Ok(match self {
            GeneratorSpec::PreyPredator { params, forcing } => simulate_prey_predator(params, forcing, n)?,
            GeneratorSpec::WhSynthetic { params, input } => generate_wh(params, input, n, seed)?,
        })
    }
}

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    #[serde(flatten)]
    pub spec: GeneratorSpec,
    pub n: usize,
    pub seed: u64,
    pub seed_used: bool,
    pub dt: f64,
    pub columns: Vec<String>,
    pub version: String,
}

impl DatasetMeta {
    pub fn new(spec: &GeneratorSpec, ds: &Dataset, seed: u64) -> Self {
        Self {
            format: META_FORMAT.into(),
            spec: spec.clone(),
            n: ds.len(),
            seed,
            seed_used: spec.uses_seed(),
            dt: ds.dt(),
            columns: Header { m: ds.input_dim(), p: ds.output_dim() }.names(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// `data/pp.csv` → `data/pp.meta.json`
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Generates `n` samples and writes the CSV plus its sidecar.
pub fn write_generated(spec: &GeneratorSpec, n: usize, seed: u64, csv_path: &Path) -> AppResult<Dataset> {
    let ds = spec.generate(n, seed)?;
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::AppError::io(dir, e))?;
    }
    save_csv(&ds, csv_path)?;
    jsonio::write(&meta_path(csv_path), &DatasetMeta::new(spec, &ds, seed))?;
    Ok(ds)
}
