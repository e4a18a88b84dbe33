//! Grid search over architecture and learning rate, plus the narrow
//! learning-rate-only search used when repairing a deployed model.
//!
//! Every trial is scored on the same seeded validation tail the trainer
//! holds out, so trial metrics and early stopping agree.

use std::io::Write;
use std::time::Instant;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{
    init_network, train_layers, validation_split, Activation, AnnError, Architecture, Metrics, NetworkModel,
    Predictor, TrainConfig, TrainableLayers,
};

/// Multipliers applied to the incumbent learning rate by [`search_lr_only`].
pub const LR_MULTIPLIERS: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("every trial diverged: {}", .0.join("; "))]
    AllDiverged(Vec<String>),
    #[error(transparent)]
    Ann(#[from] AnnError),
}

impl TuningError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, TuningError::AllDiverged(_) | TuningError::Ann(AnnError::Divergence { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden_widths: Vec<usize>,
    pub hidden_depths: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_widths: vec![8, 16, 32, 64],
            hidden_depths: vec![1, 2],
            learning_rates: vec![0.0003, 0.001, 0.003, 0.01],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), TuningError> {
        if self.hidden_widths.is_empty() || self.hidden_depths.is_empty() || self.learning_rates.is_empty() {
            return Err(TuningError::Space("widths, depths and rates must be non-empty".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(TuningError::Space("widths must be >= 1".into()));
        }
        if self.learning_rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(TuningError::Space("learning rates must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.hidden_widths.len() * self.hidden_depths.len() * self.learning_rates.len()
    }
}

/// Epoch budget shared by every trial of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub patience: usize,
    pub mini_batch_size: usize,
}

impl TrainBudget {
    pub fn initial() -> Self {
        Self {
            max_epochs: 2000,
            patience: 20,
            mini_batch_size: 32,
        }
    }

    pub fn update() -> Self {
        Self {
            max_epochs: 500,
            patience: 20,
            mini_batch_size: 32,
        }
    }

    pub fn config(&self, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            max_epochs: self.max_epochs,
            early_stop_patience: self.patience,
            mini_batch_size: self.mini_batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Trained,
    /// The incoming model scored without any fine-tuning.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub kind: TrialKind,
    pub architecture: Architecture,
    pub learning_rate: Option<f64>,
    pub validation: Option<Metrics>,
    pub epochs: usize,
    /// Divergence message when the trial failed.
    pub failure: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_architecture: Architecture,
    pub best_config: Option<TrainConfig>,
    pub trials: Vec<TrialRecord>,
    pub tuning_seconds: f64,
    pub training_seconds: f64,
}

impl SearchResult {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best_index]
    }
}

fn round_ms(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

fn score(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    val_idx: &[usize],
) -> Result<Metrics, AnnError> {
    let x = inputs.select(Axis(0), val_idx);
    let y = targets.select(Axis(0), val_idx);
    let pred = model.predict(x.view())?;
    Metrics::lenient(y.view(), pred.view()).map_err(|e| AnnError::Config(e.to_string()))
}

/// Index of the lowest validation RMSE; ties keep the earliest trial.
fn select(trials: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for t in trials {
        if let Some(m) = &t.validation {
            if m.rmse.is_finite() && best.is_none_or(|(_, r)| m.rmse < r) {
                best = Some((t.index, m.rmse));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Rows used to score trials: the validation tail of `validation_split`,
/// or every row when the set is too small to split.
pub fn validation_rows(n: usize, seed: u64) -> Vec<usize> {
    let (fit, val) = validation_split(n, seed);
    if val.is_empty() {
        fit
    } else {
        val
    }
}

/// Exhaustive grid, depth-major, width-minor, rate-innermost. Every trial
/// initializes and trains with `seed`; the winner is retrained from scratch
/// and that run is reported as `training_seconds`.
pub fn search_full(
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    space: &SearchSpace,
    activation: Activation,
    budget: &TrainBudget,
    seed: u64,
) -> Result<(NetworkModel, SearchResult), TuningError> {
    space.validate()?;
    let clock = Instant::now();
    let val_idx = validation_rows(inputs.nrows(), seed);
    let mut trials = Vec::with_capacity(space.n_trials());
    let mut failures = Vec::new();
    for &depth in &space.hidden_depths {
        for &width in &space.hidden_widths {
            let arch = Architecture::new(inputs.ncols(), vec![width; depth], activation)?;
            for &lr in &space.learning_rates {
                let started = Instant::now();
                let index = trials.len();
                let cfg = budget.config(lr, seed);
                let model = init_network(&arch, seed)?;
                let outcome = train_layers(&model, inputs, targets, &cfg, TrainableLayers::All);
                let (validation, epochs, failure) = match outcome {
                    Ok((trained, trace)) => (Some(score(&trained, inputs, targets, &val_idx)?), trace.epochs.len(), None),
                    Err(AnnError::Divergence { epoch }) => {
                        let msg = format!("trial {index} (depth {depth}, width {width}, lr {lr}) diverged at epoch {epoch}");
                        failures.push(msg.clone());
                        (None, epoch, Some(msg))
                    }
                    Err(e) => return Err(e.into()),
                };
                trials.push(TrialRecord {
                    index,
                    kind: TrialKind::Trained,
                    architecture: arch.clone(),
                    learning_rate: Some(lr),
                    validation,
                    epochs,
                    failure,
                    seconds: round_ms(started.elapsed().as_secs_f64()),
                });
            }
        }
    }
    let best_index = select(&trials).ok_or(TuningError::AllDiverged(failures))?;
    let tuning_seconds = round_ms(clock.elapsed().as_secs_f64());

    let best_arch = trials[best_index].architecture.clone();
    let best_cfg = budget.config(trials[best_index].learning_rate.expect("trained trial"), seed);
    let started = Instant::now();
    let (mut model, _) = train_layers(&init_network(&best_arch, seed)?, inputs, targets, &best_cfg, TrainableLayers::All)?;
    let training_seconds = round_ms(started.elapsed().as_secs_f64());
    model.provenance = "trained".into();

    Ok((
        model,
        SearchResult {
            best_index,
            best_architecture: best_arch,
            best_config: Some(best_cfg),
            trials,
            tuning_seconds,
            training_seconds,
        },
    ))
}

/// The five rates tried around `base_lr`.
pub fn lr_grid(base_lr: f64) -> Vec<f64> {
    LR_MULTIPLIERS.iter().map(|m| m * base_lr).collect()
}

/// Fine-tune copies of `model` at five rates around `base_lr`, training only
/// the layers selected by `trainable`. A sixth baseline trial scores the
/// unchanged model, so the selection never regresses on the validation
/// tail. `training_seconds` is the selected trial's time (0 for baseline).
pub fn search_lr_only(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    base_lr: f64,
    trainable: TrainableLayers,
    budget: &TrainBudget,
    seed: u64,
) -> Result<(NetworkModel, SearchResult), TuningError> {
    if !(base_lr > 0.0 && base_lr.is_finite()) {
        return Err(TuningError::Space(format!("base learning rate must be > 0, got {base_lr}")));
    }
    if inputs.nrows() == 0 {
        return Err(TuningError::Ann(AnnError::Config("no update rows".into())));
    }
    let clock = Instant::now();
    let val_idx = validation_rows(inputs.nrows(), seed);
    let mut trials = Vec::with_capacity(LR_MULTIPLIERS.len() + 1);
    let mut candidates = Vec::with_capacity(LR_MULTIPLIERS.len() + 1);
    let mut failures = Vec::new();
    for lr in lr_grid(base_lr) {
        let started = Instant::now();
        let index = trials.len();
        let cfg = budget.config(lr, seed);
        let (validation, epochs, failure, tuned) = match train_layers(model, inputs, targets, &cfg, trainable) {
            Ok((tuned, trace)) => (Some(score(&tuned, inputs, targets, &val_idx)?), trace.epochs.len(), None, Some(tuned)),
            Err(AnnError::Divergence { epoch }) => {
                let msg = format!("trial {index} (lr {lr}) diverged at epoch {epoch}");
                failures.push(msg.clone());
                (None, epoch, Some(msg), None)
            }
            Err(e) => return Err(e.into()),
        };
        trials.push(TrialRecord {
            index,
            kind: TrialKind::Trained,
            architecture: model.architecture.clone(),
            learning_rate: Some(lr),
            validation,
            epochs,
            failure,
            seconds: round_ms(started.elapsed().as_secs_f64()),
        });
        candidates.push(tuned);
    }
    if failures.len() == LR_MULTIPLIERS.len() {
        return Err(TuningError::AllDiverged(failures));
    }

    let started = Instant::now();
    trials.push(TrialRecord {
        index: trials.len(),
        kind: TrialKind::Baseline,
        architecture: model.architecture.clone(),
        learning_rate: None,
        validation: Some(score(model, inputs, targets, &val_idx)?),
        epochs: 0,
        failure: None,
        seconds: round_ms(started.elapsed().as_secs_f64()),
    });
    candidates.push(Some(model.clone()));

    let best_index = select(&trials).ok_or(TuningError::AllDiverged(failures))?;
    let chosen = candidates.swap_remove(best_index).expect("selected trial has a model");
    let best = &trials[best_index];
    let training_seconds = match best.kind {
        TrialKind::Trained => best.seconds,
        TrialKind::Baseline => 0.0,
    };
    let best_config = best.learning_rate.map(|lr| budget.config(lr, seed));
    Ok((
        chosen,
        SearchResult {
            best_index,
            best_architecture: model.architecture.clone(),
            best_config,
            trials,
            tuning_seconds: round_ms(clock.elapsed().as_secs_f64()),
            training_seconds,
        },
    ))
}

/// Trial table as CSV. Seconds are optional so that deterministic reports
/// can omit wall-clock values.
pub fn write_trials_csv<W: Write>(
    label: &str,
    result: &SearchResult,
    include_seconds: bool,
    writer: &mut csv::Writer<W>,
    write_header: bool,
) -> Result<(), csv::Error> {
    if write_header {
        let mut header = vec![
            "search", "trial", "kind", "hidden_layers", "activation", "learning_rate", "epochs", "val_rmse", "val_mae",
            "val_r2", "selected", "failure",
        ];
        if include_seconds {
            header.push("seconds");
        }
        writer.write_record(&header)?;
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &result.trials {
        let hidden = t
            .architecture
            .hidden_layers
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x");
        let mut record = vec![
            label.to_string(),
            t.index.to_string(),
            format!("{:?}", t.kind).to_lowercase(),
            hidden,
            format!("{:?}", t.architecture.activation).to_lowercase(),
            opt(t.learning_rate),
            t.epochs.to_string(),
            opt(t.validation.map(|m| m.rmse)),
            opt(t.validation.map(|m| m.mae)),
            opt(t.validation.and_then(|m| m.r2)),
            (t.index == result.best_index).to_string(),
            t.failure.clone().unwrap_or_default(),
        ];
        if include_seconds {
            record.push(format!("{:.3}", t.seconds));
        }
        writer.write_record(&record)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> TrainBudget {
        TrainBudget {
            max_epochs: 60,
            patience: 10,
            mini_batch_size: 16,
        }
    }

    fn data(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, 2), || rng.random_range(0.0..1.0));
        let y = x.rows().into_iter().map(|r| 0.5 * r[0] + 0.3 * r[1] * r[1]).collect();
        (x, y)
    }

    #[test]
    fn single_config_space() {
        let (x, y) = data(80, 1);
        let space = SearchSpace {
            hidden_widths: vec![4],
            hidden_depths: vec![1],
            learning_rates: vec![0.01],
        };
        let (model, res) = search_full(x.view(), y.view(), &space, Activation::Relu, &quick(), 3).unwrap();
        assert_eq!(res.trials.len(), 1);
        assert_eq!(res.best_index, 0);
        assert_eq!(model.architecture.hidden_layers, vec![4]);
    }

    #[test]
    fn trial_order_is_depth_width_rate() {
        let (x, y) = data(60, 2);
        let space = SearchSpace {
            hidden_widths: vec![2, 3],
            hidden_depths: vec![1, 2],
            learning_rates: vec![0.01, 0.02],
        };
        let (_, res) = search_full(x.view(), y.view(), &space, Activation::Tanh, &quick(), 3).unwrap();
        assert_eq!(res.trials.len(), 8);
        let order: Vec<(Vec<usize>, f64)> = res
            .trials
            .iter()
            .map(|t| (t.architecture.hidden_layers.clone(), t.learning_rate.unwrap()))
            .collect();
        assert_eq!(order[0], (vec![2], 0.01));
        assert_eq!(order[1], (vec![2], 0.02));
        assert_eq!(order[2], (vec![3], 0.01));
        assert_eq!(order[4], (vec![2, 2], 0.01));
        let best = res.best().validation.unwrap().rmse;
        assert!(res.trials.iter().all(|t| t.validation.unwrap().rmse >= best));
    }

    #[test]
    fn search_is_deterministic() {
        let (x, y) = data(60, 4);
        let space = SearchSpace {
            hidden_widths: vec![3, 5],
            hidden_depths: vec![1],
            learning_rates: vec![0.01],
        };
        let (ma, a) = search_full(x.view(), y.view(), &space, Activation::Relu, &quick(), 8).unwrap();
        let (mb, b) = search_full(x.view(), y.view(), &space, Activation::Relu, &quick(), 8).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.best_index, b.best_index);
        let metrics = |r: &SearchResult| r.trials.iter().map(|t| t.validation).collect::<Vec<_>>();
        assert_eq!(metrics(&a), metrics(&b));
    }

    #[test]
    fn lr_grid_multiplies_the_base() {
        let g = lr_grid(0.01);
        let want = [0.001, 0.0025, 0.005, 0.01, 0.02];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn lr_search_keeps_architecture_and_includes_baseline() {
        let (x, y) = data(80, 5);
        let arch = Architecture::new(2, vec![4], Activation::Relu).unwrap();
        let model = init_network(&arch, 1).unwrap();
        let (tuned, res) =
            search_lr_only(&model, x.view(), y.view(), 0.01, TrainableLayers::All, &quick(), 2).unwrap();
        assert_eq!(res.trials.len(), 6);
        assert_eq!(res.trials[5].kind, TrialKind::Baseline);
        assert!(res.trials.iter().all(|t| t.architecture == arch));
        assert_eq!(tuned.architecture, arch);
    }

    #[test]
    fn baseline_wins_when_fine_tuning_cannot_help() {
        let (x, y) = data(100, 6);
        let arch = Architecture::new(2, vec![6], Activation::Relu).unwrap();
        let (trained, _) = train_layers(
            &init_network(&arch, 1).unwrap(),
            x.view(),
            y.view(),
            &TrainBudget::initial().config(0.01, 4),
            TrainableLayers::All,
        )
        .unwrap();
        let (tuned, res) =
            search_lr_only(&trained, x.view(), y.view(), 0.01, TrainableLayers::All, &quick(), 4).unwrap();
        let baseline = res.trials[5].validation.unwrap().rmse;
        assert!(res.best().validation.unwrap().rmse <= baseline + 1e-9);
        if res.best().kind == TrialKind::Baseline {
            assert_eq!(tuned, trained);
            assert_eq!(res.training_seconds, 0.0);
        }
    }

    #[test]
    fn empty_space_is_rejected() {
        let (x, y) = data(10, 7);
        let space = SearchSpace {
            hidden_widths: vec![],
            hidden_depths: vec![1],
            learning_rates: vec![0.01],
        };
        assert!(matches!(
            search_full(x.view(), y.view(), &space, Activation::Relu, &quick(), 0),
            Err(TuningError::Space(_))
        ));
    }
}
