//! Model repair after a trigger: last-layer (LLTL), all-layers (ALTL) and
//! ensemble (ETL) transfer learning, plus per-layer weight-space summaries.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{AnnError, Metrics, NetworkModel, Predictor, TrainableLayers};
use crate::data::Scaler;
use crate::drift::quantile_sorted;
use crate::monitor::UpdateBuffer;
use crate::tuning::{search_lr_only, validation_rows, SearchResult, TrainBudget, TuningError};

/// Learning rate assumed when a model does not record one.
pub const DEFAULT_BASE_LR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error("empty update buffer")]
    EmptyBuffer,
    #[error("ensemble members disagree: {0}")]
    Ensemble(String),
    #[error("architectures differ")]
    ArchitectureMismatch,
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl UpdateError {
    pub fn is_divergence(&self) -> bool {
        match self {
            UpdateError::Tuning(t) => t.is_divergence(),
            UpdateError::Ann(AnnError::Divergence { .. }) => true,
            _ => false,
        }
    }
}

/// Frozen members whose predictions are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<NetworkModel>,
}

impl Ensemble {
    pub fn new(members: Vec<NetworkModel>) -> Result<Self, UpdateError> {
        let first = members.first().ok_or_else(|| UpdateError::Ensemble("no members".into()))?;
        for m in &members[1..] {
            if m.architecture.input_dim != first.architecture.input_dim {
                return Err(UpdateError::Ensemble("input_dim".into()));
            }
            if m.scaler != first.scaler {
                return Err(UpdateError::Ensemble("scaler".into()));
            }
        }
        Ok(Self { members })
    }

    pub fn latest(&self) -> &NetworkModel {
        self.members.last().expect("non-empty")
    }
}

impl Predictor for Ensemble {
    fn input_dim(&self) -> usize {
        self.members[0].architecture.input_dim
    }

    fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError> {
        let mut sum = Array1::zeros(inputs.nrows());
        for m in &self.members {
            sum += &m.predict(inputs)?;
        }
        Ok(sum / self.members.len() as f64)
    }
}

/// What is in production: one network or an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deployed {
    Single(NetworkModel),
    Ensemble(Ensemble),
}

impl Deployed {
    pub fn latest(&self) -> &NetworkModel {
        match self {
            Deployed::Single(m) => m,
            Deployed::Ensemble(e) => e.latest(),
        }
    }

    pub fn members(&self) -> Vec<&NetworkModel> {
        match self {
            Deployed::Single(m) => vec![m],
            Deployed::Ensemble(e) => e.members.iter().collect(),
        }
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.latest().scaler.as_ref()
    }
}

impl Predictor for Deployed {
    fn input_dim(&self) -> usize {
        match self {
            Deployed::Single(m) => m.input_dim(),
            Deployed::Ensemble(e) => e.input_dim(),
        }
    }

    fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError> {
        match self {
            Deployed::Single(m) => m.predict(inputs),
            Deployed::Ensemble(e) => e.predict(inputs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Lltl,
    Altl,
    Etl,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Lltl, Strategy::Altl, Strategy::Etl];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Lltl => "lltl",
            Strategy::Altl => "altl",
            Strategy::Etl => "etl",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lltl" => Ok(Strategy::Lltl),
            "altl" => Ok(Strategy::Altl),
            "etl" => Ok(Strategy::Etl),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Per-layer weight distribution (biases excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub layer: usize,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: [f64; 5],
    pub std: f64,
    /// IQR of this layer over the reference layer's IQR; `None` when the
    /// reference IQR is zero.
    pub iqr_ratio: Option<f64>,
}

pub const SUMMARY_PROBABILITIES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

impl WeightSummary {
    pub fn iqr(&self) -> f64 {
        self.quantiles[3] - self.quantiles[1]
    }
}

fn layer_stats(weights: &[f64]) -> ([f64; 5], f64) {
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = SUMMARY_PROBABILITIES.map(|p| quantile_sorted(&sorted, p));
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
    (q, var.sqrt())
}

pub fn weight_summary(model: &NetworkModel, reference: &NetworkModel) -> Result<Vec<WeightSummary>, UpdateError> {
    if model.architecture.layer_shapes() != reference.architecture.layer_shapes() {
        return Err(UpdateError::ArchitectureMismatch);
    }
    Ok(model
        .layers
        .iter()
        .zip(&reference.layers)
        .enumerate()
        .map(|(layer, (cur, refl))| {
            let (quantiles, std) = layer_stats(cur.weights.as_slice().expect("standard layout"));
            let (rq, _) = layer_stats(refl.weights.as_slice().expect("standard layout"));
            let ref_iqr = rq[3] - rq[1];
            let iqr_ratio = (ref_iqr > 0.0).then(|| (quantiles[3] - quantiles[1]) / ref_iqr);
            WeightSummary {
                layer,
                quantiles,
                std,
                iqr_ratio,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub strategy: Strategy,
    #[serde(skip)]
    pub deployed: Option<Deployed>,
    pub members: usize,
    pub search: SearchResult,
    /// Source model summarized against itself.
    pub weights_before: Vec<WeightSummary>,
    /// Fine-tuned (or new member) network against the source.
    pub weights_after: Vec<WeightSummary>,
    /// Deployed model on the buffer's validation tail.
    pub validation: Metrics,
    /// Stale model on the same rows.
    pub stale_validation: Metrics,
    pub degenerate_buffer: bool,
    pub seconds: f64,
}

impl UpdateOutcome {
    pub fn deployed(&self) -> &Deployed {
        self.deployed.as_ref().expect("outcome holds its model")
    }
}

fn base_lr(model: &NetworkModel) -> f64 {
    model.learning_rate.filter(|lr| *lr > 0.0 && lr.is_finite()).unwrap_or(DEFAULT_BASE_LR)
}

fn validation_metrics(predictor: &dyn Predictor, buffer: &UpdateBuffer, seed: u64) -> Result<Metrics, UpdateError> {
    let idx = validation_rows(buffer.len(), seed);
    let x = buffer.inputs.select(Axis(0), &idx);
    let y = buffer.targets.select(Axis(0), &idx);
    let pred = predictor.predict(x.view())?;
    Metrics::lenient(y.view(), pred.view()).map_err(|e| UpdateError::Ann(AnnError::Config(e.to_string())))
}

fn fine_tune(
    source: &NetworkModel,
    buffer: &UpdateBuffer,
    trainable: TrainableLayers,
    budget: &TrainBudget,
    seed: u64,
    tag: &str,
) -> Result<(NetworkModel, SearchResult), UpdateError> {
    if buffer.is_empty() {
        return Err(UpdateError::EmptyBuffer);
    }
    let (mut tuned, search) = search_lr_only(
        source,
        buffer.inputs.view(),
        buffer.targets.view(),
        base_lr(source),
        trainable,
        budget,
        seed,
    )?;
    if let Some(cfg) = &search.best_config {
        tuned.learning_rate = Some(cfg.learning_rate);
        tuned.train_seed = seed;
    }
    tuned.provenance = tag.to_string();
    Ok((tuned, search))
}

fn single_update(
    strategy: Strategy,
    model: &NetworkModel,
    buffer: &UpdateBuffer,
    budget: &TrainBudget,
    seed: u64,
) -> Result<UpdateOutcome, UpdateError> {
    let clock = Instant::now();
    let trainable = match strategy {
        Strategy::Lltl => TrainableLayers::OutputOnly,
        _ => TrainableLayers::All,
    };
    let (tuned, search) = fine_tune(model, buffer, trainable, budget, seed, strategy.label())?;
    let outcome = UpdateOutcome {
        strategy,
        members: 1,
        weights_before: weight_summary(model, model)?,
        weights_after: weight_summary(&tuned, model)?,
        validation: validation_metrics(&tuned, buffer, seed)?,
        stale_validation: validation_metrics(model, buffer, seed)?,
        degenerate_buffer: buffer.degenerate,
        search,
        deployed: Some(Deployed::Single(tuned)),
        seconds: 0.0,
    };
    Ok(UpdateOutcome {
        seconds: clock.elapsed().as_secs_f64(),
        ..outcome
    })
}

/// Retrain the output layer (weights and bias) only.
pub fn update_lltl(model: &NetworkModel, buffer: &UpdateBuffer, budget: &TrainBudget, seed: u64) -> Result<UpdateOutcome, UpdateError> {
    single_update(Strategy::Lltl, model, buffer, budget, seed)
}

/// Warm-started fine-tune of every layer.
pub fn update_altl(model: &NetworkModel, buffer: &UpdateBuffer, budget: &TrainBudget, seed: u64) -> Result<UpdateOutcome, UpdateError> {
    single_update(Strategy::Altl, model, buffer, budget, seed)
}

/// Freeze the current member(s) and append an all-layers fine-tuned copy
/// of the latest member.
pub fn update_etl(deployed: &Deployed, buffer: &UpdateBuffer, budget: &TrainBudget, seed: u64) -> Result<UpdateOutcome, UpdateError> {
    let clock = Instant::now();
    let source = deployed.latest();
    let (member, search) = fine_tune(source, buffer, TrainableLayers::All, budget, seed, "etl")?;
    let weights_after = weight_summary(&member, source)?;
    let mut members: Vec<NetworkModel> = deployed.members().into_iter().cloned().collect();
    members.push(member);
    let ensemble = Ensemble::new(members)?;
    let outcome = UpdateOutcome {
        strategy: Strategy::Etl,
        members: ensemble.members.len(),
        weights_before: weight_summary(source, source)?,
        weights_after,
        validation: validation_metrics(&ensemble, buffer, seed)?,
        stale_validation: validation_metrics(deployed, buffer, seed)?,
        degenerate_buffer: buffer.degenerate,
        search,
        deployed: Some(Deployed::Ensemble(ensemble)),
        seconds: 0.0,
    };
    Ok(UpdateOutcome {
        seconds: clock.elapsed().as_secs_f64(),
        ..outcome
    })
}

/// Dispatch by strategy. LLTL and ALTL act on the latest member.
pub fn run_strategy(
    strategy: Strategy,
    deployed: &Deployed,
    buffer: &UpdateBuffer,
    budget: &TrainBudget,
    seed: u64,
) -> Result<UpdateOutcome, UpdateError> {
    match strategy {
        Strategy::Lltl => update_lltl(deployed.latest(), buffer, budget, seed),
        Strategy::Altl => update_altl(deployed.latest(), buffer, budget, seed),
        Strategy::Etl => update_etl(deployed, buffer, budget, seed),
    }
}

/// Long-format weight table: strategy, stage, layer, quantile, value.
/// Std and IQR ratio appear as extra rows with quantile `std` / `iqr_ratio`.
pub fn write_weight_summary_csv<W: Write>(
    label: &str,
    stage: &str,
    summaries: &[WeightSummary],
    writer: &mut csv::Writer<W>,
    write_header: bool,
) -> Result<(), UpdateError> {
    if write_header {
        writer.write_record(["strategy", "stage", "layer", "quantile", "value"])?;
    }
    for s in summaries {
        let layer = s.layer.to_string();
        for (p, q) in SUMMARY_PROBABILITIES.iter().zip(s.quantiles) {
            writer.write_record([label, stage, &layer, &format!("q{:02}", (p * 100.0).round() as u32), &q.to_string()])?;
        }
        writer.write_record([label, stage, &layer, "std", &s.std.to_string()])?;
        let ratio = s.iqr_ratio.map(|r| r.to_string()).unwrap_or_default();
        writer.write_record([label, stage, &layer, "iqr_ratio", &ratio])?;
    }
    Ok(())
}
