//! Small dense feedforward regressor with a single linear output.
//!
//! Hidden layers use ReLU (default) or tanh. Weight matrices are stored as
//! `out x in` so a layer computes `a_prev . W^T + b`.

mod gradcheck;
mod io;
mod metrics;
mod train;

pub use gradcheck::{gradient_check, loss_and_gradient, max_relative_error, numeric_gradient};
pub use io::{load_model, save_model, MODEL_FORMAT};
pub use metrics::{compute_metrics, mae, rmse, Metrics, MetricsError};
pub use train::{train, train_layers, validation_split, EpochRecord, TrainConfig, TrainTrace, TrainableLayers};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Scaler;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("expected {expected} input columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{inputs} input rows but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("model document: {0}")]
    Document(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, activation: Activation) -> Result<Self, AnnError> {
        let arch = Self {
            input_dim,
            hidden_layers,
            activation,
            output_dim: 1,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), AnnError> {
        if self.input_dim == 0 || self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(AnnError::Architecture("all layer widths must be >= 1".into()));
        }
        if self.output_dim != 1 {
            return Err(AnnError::Architecture("output_dim must be 1".into()));
        }
        Ok(())
    }

    /// `(out, in)` shape of every weight matrix, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weights: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "io::ModelDocument", into = "io::ModelDocument")]
pub struct NetworkModel {
    pub architecture: Architecture,
    pub layers: Vec<DenseLayer>,
    /// Scaler the model's inputs and target were normalized with.
    pub scaler: Option<Scaler>,
    pub train_seed: u64,
    /// Learning rate of the most recent training run, if any.
    pub learning_rate: Option<f64>,
    /// Free-form origin tag, e.g. `trained`, `lltl`.
    pub provenance: String,
}

/// Anything that maps normalized input rows to normalized predictions.
pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError>;
}

/// Glorot-uniform weights, zero biases.
pub fn init_network(arch: &Architecture, seed: u64) -> Result<NetworkModel, AnnError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(out, inp)| {
            let limit = (6.0 / (out + inp) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((out, inp), || rng.random_range(-limit..limit));
            DenseLayer {
                weights,
                bias: Array1::zeros(out),
            }
        })
        .collect();
    Ok(NetworkModel {
        architecture: arch.clone(),
        layers,
        scaler: None,
        train_seed: seed,
        learning_rate: None,
        provenance: "initialized".into(),
    })
}

pub(crate) struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the network input).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pub pre: Vec<Array2<f64>>,
}

impl NetworkModel {
    pub fn with_scaler(mut self, scaler: Scaler) -> Self {
        self.scaler = Some(scaler);
        self
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn check_inputs(&self, inputs: &ArrayView2<'_, f64>) -> Result<(), AnnError> {
        if inputs.ncols() != self.architecture.input_dim {
            return Err(AnnError::DimensionMismatch {
                expected: self.architecture.input_dim,
                got: inputs.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> (Array1<f64>, ForwardCache) {
        let act = self.architecture.activation;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut a = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights.t()) + &layer.bias;
            cache.inputs.push(a);
            if l == last {
                return (z.index_axis_move(Axis(1), 0), cache);
            }
            a = z.mapv(|v| act.apply(v));
            cache.pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    fn forward(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        let act = self.architecture.activation;
        let last = self.layers.len() - 1;
        let mut a = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            if l == last {
                return z.index_axis_move(Axis(1), 0);
            }
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Gradients of mean squared error for layers `from_layer..`; earlier
    /// entries are zero-filled.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        outputs: &Array1<f64>,
        targets: &Array1<f64>,
        from_layer: usize,
    ) -> Vec<DenseLayer> {
        let act = self.architecture.activation;
        let n = outputs.len() as f64;
        let mut grads: Vec<DenseLayer> = self
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect();
        let mut delta = ((outputs - targets) * (2.0 / n)).insert_axis(Axis(1));
        for l in (from_layer..self.layers.len()).rev() {
            grads[l].weights = delta.t().dot(&cache.inputs[l]);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > from_layer {
                let mut upstream = delta.dot(&self.layers[l].weights);
                ndarray::Zip::from(&mut upstream)
                    .and(&cache.pre[l - 1])
                    .and(&cache.inputs[l])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
                delta = upstream;
            }
        }
        grads
    }

    /// All parameters flattened layer by layer: weights row-major, then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.architecture.n_parameters());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), AnnError> {
        if values.len() != self.architecture.n_parameters() {
            return Err(AnnError::Document(format!(
                "expected {} parameters, got {}",
                self.architecture.n_parameters(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            layer.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

impl Predictor for NetworkModel {
    fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError> {
        self.check_inputs(&inputs)?;
        Ok(self.forward(inputs))
    }
}

pub fn predict(model: &NetworkModel, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError> {
    model.predict(inputs)
}
