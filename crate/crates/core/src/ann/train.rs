use std::time::Instant;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnError, DenseLayer, NetworkModel};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub mini_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 2000,
            early_stop_patience: 20,
            mini_batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AnnError::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(AnnError::Config("max_epochs must be >= 1".into()));
        }
        if self.mini_batch_size == 0 {
            return Err(AnnError::Config("mini_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which layers receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableLayers {
    All,
    /// Output weights and bias only; hidden layers stay bit-identical.
    OutputOnly,
}

impl TrainableLayers {
    fn first(self, n_layers: usize) -> usize {
        match self {
            TrainableLayers::All => 0,
            TrainableLayers::OutputOnly => n_layers - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Cumulative wall-clock seconds at the end of each epoch.
    pub epoch_seconds: Vec<f64>,
    pub seconds: f64,
}

/// Seeded shuffle of `0..n`; the last 20% is the validation tail.
/// Samples smaller than 5 rows get no validation tail.
pub fn validation_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = if n < 5 {
        0
    } else {
        ((n as f64 * VALIDATION_FRACTION).round() as usize).max(1)
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

struct Adam {
    lr: f64,
    step: i32,
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
}

impl Adam {
    fn new(model: &NetworkModel, lr: f64) -> Self {
        let zeros: Vec<DenseLayer> = model
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, model: &mut NetworkModel, grads: &[DenseLayer], first: usize) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let lr = self.lr;
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for l in first..model.layers.len() {
            Zip::from(&mut model.layers[l].weights)
                .and(&mut self.m[l].weights)
                .and(&mut self.v[l].weights)
                .and(&grads[l].weights)
                .for_each(apply);
            Zip::from(&mut model.layers[l].bias)
                .and(&mut self.m[l].bias)
                .and(&mut self.v[l].bias)
                .and(&grads[l].bias)
                .for_each(apply);
        }
    }
}

fn mse(model: &NetworkModel, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let out = model.forward(x);
    (&out - &y).mapv(|e| e * e).mean().unwrap_or(f64::NAN)
}

/// Train every layer. See [`train_layers`].
pub fn train(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(NetworkModel, TrainTrace), AnnError> {
    train_layers(model, inputs, targets, cfg, TrainableLayers::All)
}

/// Mini-batch Adam on mean squared error, starting from `model`'s current
/// parameters. The seeded shuffle reserves a 20% validation tail; training
/// stops once validation loss has not improved for `early_stop_patience`
/// epochs and the parameters of the best epoch are returned.
pub fn train_layers(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
    trainable: TrainableLayers,
) -> Result<(NetworkModel, TrainTrace), AnnError> {
    cfg.validate()?;
    if inputs.ncols() != model.architecture.input_dim {
        return Err(AnnError::DimensionMismatch {
            expected: model.architecture.input_dim,
            got: inputs.ncols(),
        });
    }
    if inputs.nrows() != targets.len() {
        return Err(AnnError::LengthMismatch {
            inputs: inputs.nrows(),
            targets: targets.len(),
        });
    }
    if inputs.nrows() == 0 {
        return Err(AnnError::Config("no training rows".into()));
    }

    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let (mut fit_idx, val_idx) = validation_split(inputs.nrows(), cfg.seed);
    let (val_x, val_y) = if val_idx.is_empty() {
        (inputs.select(Axis(0), &fit_idx), targets.select(Axis(0), &fit_idx))
    } else {
        (inputs.select(Axis(0), &val_idx), targets.select(Axis(0), &val_idx))
    };

    let first = trainable.first(model.layers.len());
    let mut current = model.clone();
    current.learning_rate = Some(cfg.learning_rate);
    current.train_seed = cfg.seed;
    let mut adam = Adam::new(&current, cfg.learning_rate);
    let mut best: Option<(NetworkModel, f64, usize)> = None;
    let mut since_best = 0;
    let mut trace = TrainTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        epoch_seconds: Vec::new(),
        seconds: 0.0,
    };

    for epoch in 1..=cfg.max_epochs {
        fit_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in fit_idx.chunks(cfg.mini_batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y: Array1<f64> = targets.select(Axis(0), chunk);
            let (out, cache) = current.forward_cached(x.view());
            loss_sum += (&out - &y).mapv(|e| e * e).sum();
            let grads = current.backward(&cache, &out, &y, first);
            adam.update(&mut current, &grads, first);
        }
        let train_loss = loss_sum / fit_idx.len() as f64;
        let validation_loss = mse(&current, val_x.view(), val_y.view());
        if !train_loss.is_finite() || !validation_loss.is_finite() || !current.is_finite() {
            return Err(AnnError::Divergence { epoch });
        }
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        trace.epoch_seconds.push(clock.elapsed().as_secs_f64());

        match &best {
            Some((_, best_loss, _)) if validation_loss >= *best_loss => {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    trace.stopped_early = true;
                    break;
                }
            }
            _ => {
                best = Some((current.clone(), validation_loss, epoch));
                since_best = 0;
            }
        }
    }

    let (trained, _, best_epoch) = best.expect("at least one epoch ran");
    trace.best_epoch = best_epoch;
    trace.seconds = clock.elapsed().as_secs_f64();
    Ok((trained, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{init_network, rmse, Activation, Architecture, Predictor};
    use ndarray::Array2;

    fn line_data(n: usize) -> (Array2<f64>, Array1<f64>) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / (n - 1) as f64 * 0.5);
        let y = x.column(0).mapv(|v| 2.0 * v);
        (x, y)
    }

    #[test]
    fn learns_a_line_to_the_noise_floor() {
        let (x, y) = line_data(200);
        let arch = Architecture::new(1, vec![8], Activation::Relu).unwrap();
        let model = init_network(&arch, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_epochs: 500,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, trace) = train(&model, x.view(), y.view(), &cfg).unwrap();
        let err = rmse(y.view(), trained.predict(x.view()).unwrap().view());
        assert!(err < 0.02, "rmse {err}");
        assert!(trace.epochs.len() <= 500);
        assert_eq!(trained.learning_rate, Some(0.01));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = line_data(64);
        let arch = Architecture::new(1, vec![4, 3], Activation::Tanh).unwrap();
        let model = init_network(&arch, 5).unwrap();
        let cfg = TrainConfig {
            max_epochs: 30,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, ta) = train(&model, x.view(), y.view(), &cfg).unwrap();
        let (b, tb) = train(&model, x.view(), y.view(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.epochs, tb.epochs);
    }

    #[test]
    fn one_epoch_moves_parameters() {
        let (x, y) = line_data(40);
        let arch = Architecture::new(1, vec![4], Activation::Tanh).unwrap();
        let model = init_network(&arch, 5).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let (trained, trace) = train(&model, x.view(), y.view(), &cfg).unwrap();
        assert_eq!(trace.epochs.len(), 1);
        assert_ne!(trained.parameters(), model.parameters());
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let (x, y) = line_data(10);
        let arch = Architecture::new(1, vec![2], Activation::Relu).unwrap();
        let model = init_network(&arch, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&model, x.view(), y.view(), &cfg), Err(AnnError::Config(_))));
    }

    #[test]
    fn output_only_keeps_hidden_layers_bit_identical() {
        let (x, y) = line_data(50);
        let arch = Architecture::new(1, vec![6, 4], Activation::Relu).unwrap();
        let model = init_network(&arch, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let (trained, _) = train_layers(&model, x.view(), y.view(), &cfg, TrainableLayers::OutputOnly).unwrap();
        for l in 0..2 {
            assert_eq!(trained.layers[l], model.layers[l]);
        }
        assert_ne!(trained.layers[2], model.layers[2]);
    }

    #[test]
    fn huge_learning_rate_reports_divergence_epoch() {
        let (x, y) = line_data(50);
        let y = y.mapv(|v| v * 1e200);
        let arch = Architecture::new(1, vec![4], Activation::Relu).unwrap();
        let model = init_network(&arch, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        match train(&model, x.view(), y.view(), &cfg) {
            Err(AnnError::Divergence { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn split_reserves_a_fifth() {
        let (fit, val) = validation_split(100, 1);
        assert_eq!((fit.len(), val.len()), (80, 20));
        let mut all: Vec<usize> = fit.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(validation_split(4, 1).1.is_empty());
    }
}
