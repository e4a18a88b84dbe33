use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AnnError, Architecture, DenseLayer, NetworkModel};
use crate::data::Scaler;

pub const MODEL_FORMAT: &str = "tlupdate.network.v1";

/// On-disk form of a [`NetworkModel`]. Parameters are flattened layer by
/// layer (weights row-major, then bias) as 17-digit decimal strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelDocument {
    format: String,
    architecture: Architecture,
    n_parameters: usize,
    #[serde(with = "crate::numfmt::vec")]
    parameters: Vec<f64>,
    scaler: Option<Scaler>,
    train_seed: u64,
    #[serde(with = "crate::numfmt::opt", default)]
    learning_rate: Option<f64>,
    provenance: String,
}

impl From<NetworkModel> for ModelDocument {
    fn from(m: NetworkModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            n_parameters: m.architecture.n_parameters(),
            parameters: m.parameters(),
            architecture: m.architecture,
            scaler: m.scaler,
            train_seed: m.train_seed,
            learning_rate: m.learning_rate,
            provenance: m.provenance,
        }
    }
}

impl TryFrom<ModelDocument> for NetworkModel {
    type Error = AnnError;

    fn try_from(doc: ModelDocument) -> Result<Self, AnnError> {
        if doc.format != MODEL_FORMAT {
            return Err(AnnError::Document(format!("unsupported format `{}`", doc.format)));
        }
        doc.architecture.validate()?;
        if doc.parameters.iter().any(|p| !p.is_finite()) {
            return Err(AnnError::Document("non-finite parameter".into()));
        }
        let layers = doc
            .architecture
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| DenseLayer {
                weights: Array2::zeros((out, inp)),
                bias: Array1::zeros(out),
            })
            .collect();
        let mut model = NetworkModel {
            architecture: doc.architecture,
            layers,
            scaler: doc.scaler,
            train_seed: doc.train_seed,
            learning_rate: doc.learning_rate,
            provenance: doc.provenance,
        };
        model.set_parameters(&doc.parameters)?;
        Ok(model)
    }
}

impl std::fmt::Display for ModelDocument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} parameters)", self.format, self.n_parameters)
    }
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<(), AnnError> {
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel, AnnError> {
    let raw = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&raw)?)
}
