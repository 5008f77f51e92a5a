//! JSON forms of learned and planted models. Matrices are lists of rows.

use serde::Serialize;
use subsort_core::io::synthetic::PlantedModel;
use subsort_core::{MixtureModel, Subspace};

#[derive(Debug, Serialize)]
pub struct SubspaceDump {
    /// L rows of K entries.
    pub basis: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl From<&Subspace> for SubspaceDump {
    fn from(s: &Subspace) -> Self {
        SubspaceDump {
            basis: s.basis().row_iter().map(|r| r.iter().copied().collect()).collect(),
            center: s.center().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ModelDump {
    #[serde(rename = "L")]
    pub dim: usize,
    #[serde(rename = "K")]
    pub subspace_dim: usize,
    pub weights: Vec<f64>,
    pub noise_variance: f64,
    pub subspaces: Vec<SubspaceDump>,
}

impl From<&MixtureModel> for ModelDump {
    fn from(m: &MixtureModel) -> Self {
        ModelDump {
            dim: m.dim(),
            subspace_dim: m.subspace_dim(),
            weights: m.weights().iter().copied().collect(),
            noise_variance: m.noise_variance(),
            subspaces: m.subspaces().iter().map(SubspaceDump::from).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PlantedDump {
    pub noise_variance: f64,
    /// Planted bases are orthonormal.
    pub subspaces: Vec<SubspaceDump>,
    /// Planted component per original index; null for outliers and noise.
    pub component: Vec<Option<usize>>,
}

impl From<&PlantedModel> for PlantedDump {
    fn from(p: &PlantedModel) -> Self {
        PlantedDump {
            noise_variance: p.noise_variance,
            subspaces: p.subspaces.iter().map(SubspaceDump::from).collect(),
            component: p.component.clone(),
        }
    }
}
