//! Model files: JSON with row-major matrices, tagged by family.

use std::path::Path;

use alssnn_core::data::AffineScaling;
use alssnn_core::mlp::{Activation, Equilibrium};
use alssnn_core::{AlSsnnModel, GrSsnnModel, LinearSS, Mat, Mlp, Model, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::jsonio;

pub const MODEL_FORMAT: &str = "alssnn-model/1";

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &Rows, cols_if_empty: usize, what: &str) -> AppResult<Mat> {
    let ncols = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(AppError::Data(format!("{what}: rows have unequal lengths")));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFile {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
}

impl LinearFile {
    pub fn from_core(lin: &LinearSS) -> Self {
        Self { a: to_rows(&lin.a), b: to_rows(&lin.b), c: to_rows(&lin.c) }
    }

    pub fn to_core(&self) -> AppResult<LinearSS> {
        let a = from_rows(&self.a, 0, "A")?;
        let b = from_rows(&self.b, 0, "B")?;
        let c = from_rows(&self.c, a.nrows(), "C")?;
        Ok(LinearSS::new(a, b, c)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub activation: String,
    pub w_in: Rows,
    pub b_in: Vec<f64>,
    pub w_out: Rows,
    pub b_out: Vec<f64>,
}

impl MlpFile {
    pub fn from_core(net: &Mlp) -> Self {
        Self {
            activation: net.activation().tag().into(),
            w_in: to_rows(net.w_in()),
            b_in: net.b_in().iter().copied().collect(),
            w_out: to_rows(net.w_out()),
            b_out: net.b_out().iter().copied().collect(),
        }
    }

    pub fn to_core(&self) -> AppResult<Mlp> {
        let act = Activation::from_tag(&self.activation)
            .ok_or_else(|| AppError::Data(format!("unknown activation `{}`", self.activation)))?;
        Ok(Mlp::new(
            from_rows(&self.w_in, 0, "w_in")?,
            Vector::from_vec(self.b_in.clone()),
            from_rows(&self.w_out, self.b_in.len(), "w_out")?,
            Vector::from_vec(self.b_out.clone()),
            act,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelBody {
    Lti {
        linear: LinearFile,
    },
    GrSsnn {
        linear: LinearFile,
        f_net: MlpFile,
    },
    AlSsnn {
        linear: LinearFile,
        h_net: MlpFile,
        g_net: MlpFile,
        x_e: Vec<f64>,
        u_e: Vec<f64>,
        equilibrium_enforced: bool,
        c_frozen: bool,
    },
}

impl ModelBody {
    pub fn from_core(model: &Model) -> Self {
        match model {
            Model::Lti(lin) => ModelBody::Lti { linear: LinearFile::from_core(lin) },
            Model::Gr(m) => ModelBody::GrSsnn { linear: LinearFile::from_core(&m.lin), f_net: MlpFile::from_core(&m.f_net) },
            Model::Al(m) => ModelBody::AlSsnn {
                linear: LinearFile::from_core(&m.lin),
                h_net: MlpFile::from_core(&m.h_net),
                g_net: MlpFile::from_core(&m.g_net),
                x_e: m.eq.x_e.iter().copied().collect(),
                u_e: m.eq.u_e.iter().copied().collect(),
                equilibrium_enforced: m.eq_enforced,
                c_frozen: m.c_frozen,
            },
        }
    }

    pub fn to_core(&self) -> AppResult<Model> {
        Ok(match self {
            ModelBody::Lti { linear } => Model::Lti(linear.to_core()?),
            ModelBody::GrSsnn { linear, f_net } => Model::Gr(GrSsnnModel::new(linear.to_core()?, f_net.to_core()?)?),
            ModelBody::AlSsnn { linear, h_net, g_net, x_e, u_e, equilibrium_enforced, c_frozen } => {
                let eq = Equilibrium { x_e: Vector::from_vec(x_e.clone()), u_e: Vector::from_vec(u_e.clone()) };
                Model::Al(AlSsnnModel::new(
                    linear.to_core()?,
                    h_net.to_core()?,
                    g_net.to_core()?,
                    eq,
                    *equilibrium_enforced,
                    *c_frozen,
                )?)
            }
        })
    }
}

/// Affine signal scaling `z' = (z − offset) / scale` fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFile {
    pub u_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub y_offset: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl ScalingFile {
    pub fn from_core(s: &AffineScaling) -> Self {
        Self { u_offset: s.u_offset.clone(), u_scale: s.u_scale.clone(), y_offset: s.y_offset.clone(), y_scale: s.y_scale.clone() }
    }

    pub fn to_core(&self) -> AffineScaling {
        AffineScaling {
            u_offset: self.u_offset.clone(),
            u_scale: self.u_scale.clone(),
            y_offset: self.y_offset.clone(),
            y_scale: self.y_scale.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    #[serde(flatten)]
    pub body: ModelBody,
    /// Scaling the model was trained under; data are mapped through it before use.
    pub scaling: Option<ScalingFile>,
    /// Fraction of the record used for training.
    pub train_fraction: f64,
}

impl ModelFile {
    pub fn new(model: &Model, scaling: Option<&AffineScaling>, train_fraction: f64) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            body: ModelBody::from_core(model),
            scaling: scaling.map(ScalingFile::from_core),
            train_fraction,
        }
    }

    pub fn model(&self) -> AppResult<Model> {
        self.body.to_core()
    }

    pub fn scaling(&self) -> Option<AffineScaling> {
        self.scaling.as_ref().map(ScalingFile::to_core)
    }

    pub fn load(path: impl AsRef<Path>) -> AppResult<Self> {
        let file: Self = jsonio::read(path.as_ref())?;
        if file.format != MODEL_FORMAT {
            return Err(AppError::Data(format!("{}: unsupported model format `{}`", path.as_ref().display(), file.format)));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> AppResult<()> {
        jsonio::write(path.as_ref(), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn al() -> Model {
        let lin = LinearSS::new(
            Mat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]),
            Mat::from_row_slice(2, 1, &[1.0, 0.25]),
            Mat::from_row_slice(1, 2, &[1.0, -0.7]),
        )
        .unwrap();
        Model::Al(AlSsnnModel::from_linear(lin, 3, 4, 0.3, 7, true))
    }

    #[test]
    fn json_round_trip_is_exact() {
        let model = al();
        let file = ModelFile::new(&model, None, 0.5);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.model().unwrap(), model);
        assert!(text.contains("\"family\":\"al-ssnn\""));
    }

    #[test]
    fn rejects_ragged_matrix() {
        let mut file = ModelFile::new(&al(), None, 0.5);
        if let ModelBody::AlSsnn { linear, .. } = &mut file.body {
            linear.a[1].pop();
        }
        assert!(file.model().is_err());
    }
}
