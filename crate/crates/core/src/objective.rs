//! Regularized misfit `f = ‖y − h(ρ)‖₂ + α Ψ(ρ)` with a Tikhonov penalty.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, MeasurementSet};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// `‖ρ − ρ_ref‖²`
    TikhonovIdentity,
    /// `‖L(ρ − ρ_ref)‖²`, one row of `L` per interior edge with +1/−1 on the
    /// two elements sharing it.
    TikhonovSmoothness,
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tikhonov-identity" | "identity" => Ok(Self::TikhonovIdentity),
            "tikhonov-smoothness" | "smoothness" => Ok(Self::TikhonovSmoothness),
            "mumford-shah" => Err(Error::Config(
                "the Mumford-Shah regularizer is not implemented".into(),
            )),
            other => Err(Error::Config(format!("unknown regularizer `{other}`"))),
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TikhonovIdentity => "tikhonov-identity",
            Self::TikhonovSmoothness => "tikhonov-smoothness",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataNorm {
    L2,
    L2Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub regularizer: Regularizer,
    /// Reference field; `None` means homogeneous 1.
    pub rho_ref: Option<Vec<f64>>,
    pub data_norm: DataNorm,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            regularizer: Regularizer::TikhonovSmoothness,
            rho_ref: None,
            data_norm: DataNorm::L2,
        }
    }
}

impl ObjectiveSpec {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_data_norm(mut self, norm: DataNorm) -> Self {
        self.data_norm = norm;
        self
    }

    pub fn check(&self, n_elements: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if let Some(r) = &self.rho_ref {
            if r.len() != n_elements {
                return Err(Error::Domain(format!(
                    "reference field has {} entries, expected {n_elements}",
                    r.len()
                )));
            }
        }
        Ok(())
    }

    fn reference(&self, n: usize) -> Vec<f64> {
        self.rho_ref.clone().unwrap_or_else(|| vec![1.0; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data_term: f64,
    pub reg_term: f64,
}

/// The Tikhonov operator bound to a mesh.
#[derive(Debug, Clone)]
pub struct Tikhonov {
    kind: Regularizer,
    rho_ref: Vec<f64>,
    adjacency: Vec<(usize, usize)>,
}

impl Tikhonov {
    pub fn new(mesh: &Mesh, spec: &ObjectiveSpec) -> Result<Self> {
        let n = mesh.n_elements();
        spec.check(n)?;
        let adjacency = match spec.regularizer {
            Regularizer::TikhonovSmoothness => mesh.element_adjacency(),
            Regularizer::TikhonovIdentity => Vec::new(),
        };
        Ok(Self {
            kind: spec.regularizer,
            rho_ref: spec.reference(n),
            adjacency,
        })
    }

    pub fn value(&self, rho: &[f64]) -> Result<f64> {
        if rho.len() != self.rho_ref.len() {
            return Err(Error::Domain(format!(
                "field has {} entries, regularizer expects {}",
                rho.len(),
                self.rho_ref.len()
            )));
        }
        let d: Vec<f64> = rho.iter().zip(&self.rho_ref).map(|(a, b)| a - b).collect();
        Ok(match self.kind {
            Regularizer::TikhonovIdentity => d.iter().map(|v| v * v).sum(),
            Regularizer::TikhonovSmoothness => self
                .adjacency
                .iter()
                .map(|&(i, j)| (d[i] - d[j]).powi(2))
                .sum(),
        })
    }

    /// `LᵀL` as a dense matrix.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let n = self.rho_ref.len();
        match self.kind {
            Regularizer::TikhonovIdentity => DMatrix::identity(n, n),
            Regularizer::TikhonovSmoothness => {
                let mut m = DMatrix::zeros(n, n);
                for &(i, j) in &self.adjacency {
                    m[(i, i)] += 1.0;
                    m[(j, j)] += 1.0;
                    m[(i, j)] -= 1.0;
                    m[(j, i)] -= 1.0;
                }
                m
            }
        }
    }

    /// `LᵀL (ρ − ρ_ref)`, half the gradient of the penalty.
    pub fn half_gradient(&self, rho: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = rho.iter().zip(&self.rho_ref).map(|(a, b)| a - b).collect();
        match self.kind {
            Regularizer::TikhonovIdentity => d,
            Regularizer::TikhonovSmoothness => {
                let mut g = vec![0.0; d.len()];
                for &(i, j) in &self.adjacency {
                    let diff = d[i] - d[j];
                    g[i] += diff;
                    g[j] -= diff;
                }
                g
            }
        }
    }
}

/// Objective bound to a forward model and a measurement vector. Evaluation is
/// pure apart from the model's solve counter, so it can run from many threads.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    model: &'a ForwardModel,
    y: &'a MeasurementSet,
    spec: ObjectiveSpec,
    penalty: Tikhonov,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a ForwardModel, y: &'a MeasurementSet, spec: ObjectiveSpec) -> Result<Self> {
        if y.protocol != model.protocol().name || y.values.len() != model.n_measurements() {
            return Err(Error::Domain(format!(
                "measurements ({} values, protocol `{}`) do not match the model ({} values, protocol `{}`)",
                y.values.len(),
                y.protocol,
                model.n_measurements(),
                model.protocol().name
            )));
        }
        let penalty = Tikhonov::new(model.mesh(), &spec)?;
        Ok(Self {
            model,
            y,
            spec,
            penalty,
        })
    }

    pub fn model(&self) -> &'a ForwardModel {
        self.model
    }

    pub fn measurements(&self) -> &'a MeasurementSet {
        self.y
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn penalty(&self) -> &Tikhonov {
        &self.penalty
    }

    /// Composes the objective from an already computed prediction `h(ρ)`.
    pub fn compose(&self, rho: &[f64], prediction: &[f64]) -> Result<ObjectiveValue> {
        let sq: f64 = self
            .y
            .values
            .iter()
            .zip(prediction)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let data_term = match self.spec.data_norm {
            DataNorm::L2 => sq.sqrt(),
            DataNorm::L2Squared => sq,
        };
        let reg_term = self.penalty.value(rho)?;
        Ok(ObjectiveValue {
            total: data_term + self.spec.alpha * reg_term,
            data_term,
            reg_term,
        })
    }

    pub fn evaluate(&self, rho: &[f64]) -> Result<ObjectiveValue> {
        let h = self.model.forward(rho)?;
        self.compose(rho, &h.values)
    }

    /// Same objective with a different data norm, sharing the bound model.
    pub fn with_data_norm(&self, norm: DataNorm) -> Self {
        let mut out = self.clone();
        out.spec.data_norm = norm;
        out
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.spec.alpha = alpha;
        out
    }
}

pub fn tikhonov(rho: &[f64], spec: &ObjectiveSpec, mesh: &Mesh) -> Result<f64> {
    Tikhonov::new(mesh, spec)?.value(rho)
}

pub fn evaluate(
    rho: &[f64],
    y: &MeasurementSet,
    spec: &ObjectiveSpec,
    model: &ForwardModel,
) -> Result<ObjectiveValue> {
    Objective::new(model, y, spec.clone())?.evaluate(rho)
}
