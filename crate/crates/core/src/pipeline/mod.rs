//! The full monitoring loop: acquire data, train on the leading batches,
//! replay with the failure trigger, measure drift, repair the model with
//! each strategy, and evaluate the repaired models on the rest of the
//! stream.
//!
//! All stochastic choices are driven by the config seeds, so everything
//! except wall-clock timings is reproducible.

mod config;
mod emit;

pub use config::{DataSource, PipelineConfig, TriggerConfig};
pub use emit::{emit_report, strip_timings, TIMING_KEYS};

use std::time::Instant;

use chrono::{DateTime, NaiveDate, Utc};
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ann::{compute_metrics, AnnError, Architecture, Metrics, NetworkModel, Predictor};
use crate::data::{apply_scaler, fit_scaler, generate_synthetic, load_csv, make_batches, Batch, DataError, Dataset};
use crate::drift::{drift_report, DriftError, DriftReport};
use crate::explain::{importance_evolution, importance_profile, ExplainError, ImportanceEvolution, ImportanceProfile};
use crate::monitor::{
    assemble_update_buffer, replay, replay_unarmed, rows_on_dates, MonitorError, TriggerEvent, TriggerPolicy, TriggerState,
    UpdateBuffer,
};
use crate::tuning::{search_full, SearchResult, TuningError};
use crate::update::{run_strategy, Deployed, Strategy, UpdateError, UpdateOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    /// 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Divergence(_) => 4,
            _ => 1,
        }
    }

    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<TuningError> for PipelineError {
    fn from(e: TuningError) -> Self {
        match e {
            TuningError::AllDiverged(trials) => PipelineError::Divergence(trials.join("; ")),
            TuningError::Space(m) => PipelineError::Config(m),
            TuningError::Ann(a) => a.into(),
        }
    }
}

impl From<AnnError> for PipelineError {
    fn from(e: AnnError) -> Self {
        match e {
            AnnError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            other => PipelineError::stage("model", other),
        }
    }
}

impl From<MonitorError> for PipelineError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::EmptyStream => PipelineError::Data(DataError::Empty),
            MonitorError::Policy(m) => PipelineError::Config(m),
            MonitorError::Ann(a) => a.into(),
            other => PipelineError::stage("monitor", other),
        }
    }
}

impl From<UpdateError> for PipelineError {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::Tuning(t) => t.into(),
            UpdateError::Ann(a) => a.into(),
            other => PipelineError::stage("update", other),
        }
    }
}

impl From<DriftError> for PipelineError {
    fn from(e: DriftError) -> Self {
        PipelineError::stage("drift", e)
    }
}

impl From<ExplainError> for PipelineError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Ann(a) => a.into(),
            other => PipelineError::stage("explain", other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Executed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: &'static str,
    pub status: StageStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub source: String,
    pub rows: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub sampling_interval_secs: f64,
    pub batches: Vec<Batch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    /// Rows `[0, end_row)` form the training window.
    pub end_row: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub architecture: Architecture,
    pub learning_rate: Option<f64>,
    pub train: Metrics,
    pub test: Metrics,
    pub search: SearchResult,
}

/// One post-update replay segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub start_row: usize,
    /// Thresholds taken from the update's validation metrics.
    pub policy: TriggerPolicy,
    pub armed: bool,
    pub state: TriggerState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub first_row: usize,
    pub rows: usize,
    pub updated: Option<Metrics>,
    /// Stale model on exactly the same rows.
    pub stale: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub cycles: Vec<UpdateOutcome>,
    /// Triggers raised by updated models (multi-cycle only).
    pub triggers: Vec<TriggerEvent>,
    pub segments: Vec<Segment>,
    pub rebaselined: bool,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceSection {
    pub profiles: Vec<ImportanceProfile>,
    /// Per strategy, the chain from the initial model through each update.
    pub evolutions: Vec<(Strategy, ImportanceEvolution)>,
}

/// In-memory results that are written as separate files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunArtifacts {
    pub initial: Option<NetworkModel>,
    pub deployed: Vec<(Strategy, Deployed)>,
    pub timestamps: Vec<DateTime<Utc>>,
    /// Normalized targets of every row.
    pub targets: Vec<f64>,
    /// First stream row; everything before it is training data.
    pub stream_start: usize,
    /// Stale-model predictions for every stream row.
    pub stale_predictions: Vec<f64>,
    pub strategy_predictions: Vec<(Strategy, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub training: TrainingReport,
    pub baseline_policy: TriggerPolicy,
    pub replay: TriggerState,
    pub trigger: Option<TriggerEvent>,
    pub firing_days: Vec<NaiveDate>,
    pub drift: Option<DriftReport>,
    pub buffer: Option<UpdateBuffer>,
    pub updates: Vec<StrategyReport>,
    pub importance: Option<ImportanceSection>,
    pub stages: Vec<StageRecord>,
    pub timings: Vec<TimingRow>,
    #[serde(skip)]
    pub artifacts: RunArtifacts,
}

impl RunReport {
    pub fn outcome(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.updates.iter().find(|u| u.strategy == strategy)
    }
}

/// Stage 1: synthetic generation or CSV ingestion.
pub fn acquire(cfg: &PipelineConfig) -> Result<(Dataset, String), PipelineError> {
    match &cfg.data {
        DataSource::Synthetic {
            days,
            interval_secs,
            drift,
            seed,
        } => Ok((
            generate_synthetic(*days, *interval_secs, drift.as_ref(), seed.unwrap_or(cfg.seed))?,
            "synthetic".into(),
        )),
        DataSource::Csv { path, schema } => Ok((load_csv(path, schema)?, path.display().to_string())),
    }
}

/// Seeded random split of `n` rows; returns sorted (train, test) indices.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub struct InitialModel {
    pub model: NetworkModel,
    pub normalized: Dataset,
    pub report: TrainingReport,
}

/// Stage 2: fit the scaler on the training split of the leading batches,
/// run the full search and score the held-out test split.
pub fn train_initial(raw: &Dataset, batches: &[Batch], cfg: &PipelineConfig) -> Result<InitialModel, PipelineError> {
    if batches.len() <= cfg.train_batches {
        return Err(DataError::Invalid(format!(
            "{} batches of {} days; need more than {} to leave a stream",
            batches.len(),
            cfg.batch_days,
            cfg.train_batches
        ))
        .into());
    }
    let end_row = batches[cfg.train_batches - 1].end;
    let (train_idx, test_idx) = train_test_split(end_row, cfg.test_fraction, cfg.seed);
    let columns = raw.schema.value_columns();
    let scaler = fit_scaler(&raw.select(&train_idx), &columns)?;
    let normalized = apply_scaler(&scaler, raw)?;

    let x = normalized.inputs();
    let y = normalized.targets();
    let (x_train, y_train) = (x.select(Axis(0), &train_idx), y.select(Axis(0), &train_idx));
    let (x_test, y_test) = (x.select(Axis(0), &test_idx), y.select(Axis(0), &test_idx));
    let (model, search) = search_full(
        x_train.view(),
        y_train.view(),
        &cfg.search,
        cfg.activation,
        &cfg.initial_budget,
        cfg.seed,
    )?;
    let model = model.with_scaler(scaler);
    let metrics = |xs: ndarray::ArrayView2<'_, f64>, ys: ndarray::ArrayView1<'_, f64>| -> Result<Metrics, PipelineError> {
        let p = model.predict(xs)?;
        compute_metrics(ys, p.view()).map_err(|e| DataError::Invalid(format!("training metrics: {e}")).into())
    };
    let report = TrainingReport {
        end_row,
        train_rows: train_idx.len(),
        test_rows: test_idx.len(),
        architecture: model.architecture.clone(),
        learning_rate: model.learning_rate,
        train: metrics(x_train.view(), y_train.view())?,
        test: metrics(x_test.view(), y_test.view())?,
        search,
    };
    Ok(InitialModel {
        model,
        normalized,
        report,
    })
}

fn positive(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE)
}

struct Clock(Vec<TimingRow>);

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        self.push(stage, started.elapsed().as_secs_f64());
        out
    }

    fn push(&mut self, stage: &str, seconds: f64) {
        self.0.push(TimingRow {
            stage: stage.to_string(),
            seconds,
        });
    }
}

fn lenient(targets: &[f64], preds: &[f64]) -> Option<Metrics> {
    if targets.is_empty() {
        return None;
    }
    Metrics::lenient(targets.into(), preds.into()).ok()
}

/// Stage 6 for one strategy: replay the repaired model from the end of the
/// buffer on, re-arming and updating again in multi-cycle mode.
fn follow_up(
    strategy: Strategy,
    first: UpdateOutcome,
    buffer: &UpdateBuffer,
    normalized: &Dataset,
    batches: &[Batch],
    stale_all: &[f64],
    cfg: &PipelineConfig,
) -> Result<(StrategyReport, Deployed, Vec<Option<f64>>), PipelineError> {
    let n = normalized.len();
    let mut preds = vec![None; n];
    let mut cycles = vec![first];
    let mut triggers = Vec::new();
    let mut segments = Vec::new();
    let mut cursor = buffer.end_row;
    while cursor < n {
        let current = cycles.last().expect("at least one cycle");
        let deployed = current.deployed().clone();
        let policy = cfg
            .trigger
            .policy(positive(current.validation.rmse), positive(current.validation.mae));
        let stream = normalized.slice(cursor, n);
        let rep = if cfg.multi_cycle {
            replay(&deployed, &stream, &policy)?
        } else {
            replay_unarmed(&deployed, &stream, &policy)?
        };
        for (slot, p) in preds[cursor..].iter_mut().zip(&rep.predictions) {
            *slot = *p;
        }
        let fired = rep.state.fired_on;
        segments.push(Segment {
            start_row: cursor,
            policy: policy.clone(),
            armed: cfg.multi_cycle,
            state: rep.state,
        });
        let Some(date) = fired.filter(|_| cfg.multi_cycle) else {
            break;
        };
        let next_buffer = assemble_update_buffer(normalized, batches, date)?;
        triggers.push(TriggerEvent::new(date, &policy, &next_buffer));
        let seed = cfg.seed.wrapping_add(cycles.len() as u64);
        let next = run_strategy(strategy, &deployed, &next_buffer, &cfg.update_budget, seed)?;
        cursor = next_buffer.end_row;
        cycles.push(next);
    }

    let targets = normalized.targets();
    let stream_start = n - stale_all.len();
    let (mut t, mut p, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (row, pred) in preds.iter().enumerate() {
        if let Some(v) = pred {
            t.push(targets[row]);
            p.push(*v);
            s.push(stale_all[row - stream_start]);
        }
    }
    let evaluation = Evaluation {
        first_row: buffer.end_row,
        rows: t.len(),
        updated: lenient(&t, &p),
        stale: lenient(&t, &s),
    };
    let deployed = cycles.last().expect("at least one cycle").deployed().clone();
    Ok((
        StrategyReport {
            strategy,
            cycles,
            triggers,
            segments,
            rebaselined: true,
            evaluation,
        },
        deployed,
        preds,
    ))
}

/// Version tag of the `k`-th (1-based) update of a strategy.
pub fn version_tag(strategy: Strategy, k: usize) -> String {
    if k == 1 {
        strategy.label().to_string()
    } else {
        format!("{}#{k}", strategy.label())
    }
}

fn explain_stage(
    cfg: &PipelineConfig,
    initial: &InitialModel,
    updates: &[StrategyReport],
    normalized: &Dataset,
    buffers: &[(Strategy, Vec<UpdateBuffer>)],
) -> Result<Option<ImportanceSection>, PipelineError> {
    let Some(settings) = &cfg.explain else {
        return Ok(None);
    };
    let names: Vec<String> = normalized.schema.input_names.clone();
    let end = initial.report.end_row;
    let train_x = normalized.inputs().slice_axis(Axis(0), (0..end).into()).to_owned();
    let (bg, ev) = settings.subsample(train_x.view(), train_x.view());
    let base = importance_profile(&initial.model, ev.view(), bg.view(), &names, "initial")?;
    let mut profiles = vec![base.clone()];
    let mut evolutions = Vec::new();
    for (report, (_, bufs)) in updates.iter().zip(buffers) {
        let mut chain = vec![base.clone()];
        for (k, (outcome, buffer)) in report.cycles.iter().zip(bufs).enumerate() {
            let window_end = bufs.get(k + 1).map_or(normalized.len(), |b| b.end_row);
            let eval_rows = if buffer.end_row < window_end {
                normalized.inputs().slice_axis(Axis(0), (buffer.end_row..window_end).into()).to_owned()
            } else {
                buffer.inputs.clone()
            };
            let (bg, ev) = settings.subsample(buffer.inputs.view(), eval_rows.view());
            let tag = version_tag(report.strategy, k + 1);
            let p = importance_profile(outcome.deployed(), ev.view(), bg.view(), &names, &tag)?;
            chain.push(p.clone());
            profiles.push(p);
        }
        evolutions.push((report.strategy, importance_evolution(&chain)?));
    }
    Ok(Some(ImportanceSection { profiles, evolutions }))
}

/// Run every stage in order. Update stages are skipped when the trigger
/// never fires.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let mut clock = Clock(Vec::new());
    let mut stages = Vec::new();
    let mut stage = |name: &'static str, done: bool| {
        stages.push(StageRecord {
            stage: name,
            status: if done { StageStatus::Executed } else { StageStatus::Skipped },
        })
    };

    let (raw, source) = clock.time("acquire", || acquire(cfg))?;
    let batches = make_batches(&raw, cfg.batch_days)?;
    stage("acquire", true);

    let initial = train_initial(&raw, &batches, cfg)?;
    clock.push("tuning", initial.report.search.tuning_seconds);
    clock.push("training", initial.report.search.training_seconds);
    stage("train", true);

    let normalized = &initial.normalized;
    let n = normalized.len();
    let stream_start = initial.report.end_row;
    let baseline_policy = cfg.trigger.policy(initial.report.test.rmse, initial.report.test.mae);
    let stream = normalized.slice(stream_start, n);
    let first = clock.time("replay", || replay(&initial.model, &stream, &baseline_policy))?;
    let stale_all = initial.model.predict(stream.inputs())?.to_vec();
    stage("replay", true);

    let mut trigger = None;
    let mut firing_days = Vec::new();
    let mut drift = None;
    let mut buffer = None;
    let mut updates = Vec::new();
    let mut deployed_models = Vec::new();
    let mut strategy_predictions = Vec::new();
    let mut update_buffers = Vec::new();

    if let Some(date) = first.state.fired_on {
        firing_days = first.state.firing_run();
        let current = rows_on_dates(&raw.slice(stream_start, n), &firing_days);
        let reference = raw.slice(0, stream_start);
        drift = Some(clock.time("drift", || drift_report(&reference, &current, &cfg.drift))?);
        stage("drift", true);

        let buf = assemble_update_buffer(normalized, &batches, date)?;
        trigger = Some(TriggerEvent::new(date, &baseline_policy, &buf));
        stage("buffer", true);

        let source_model = Deployed::Single(initial.model.clone());
        let mut outcomes = Vec::new();
        for &s in &cfg.strategies {
            let outcome = run_strategy(s, &source_model, &buf, &cfg.update_budget, cfg.seed)?;
            clock.push(&format!("update:{s}"), outcome.seconds);
            clock.push(&format!("update_tuning:{s}"), outcome.search.tuning_seconds);
            clock.push(&format!("update_training:{s}"), outcome.search.training_seconds);
            outcomes.push(outcome);
        }
        stage("update", true);

        for outcome in outcomes {
            let s = outcome.strategy;
            let (report, deployed, preds) = clock.time(&format!("post_update_replay:{s}"), || {
                follow_up(s, outcome, &buf, normalized, &batches, &stale_all, cfg)
            })?;
            let mut bufs = vec![buf.clone()];
            for t in &report.triggers {
                bufs.push(assemble_update_buffer(normalized, &batches, t.fire_date)?);
            }
            update_buffers.push((s, bufs));
            deployed_models.push((s, deployed));
            strategy_predictions.push((s, preds));
            updates.push(report);
        }
        stage("post_update_replay", true);
        buffer = Some(buf);
    } else {
        for name in ["drift", "buffer", "update", "post_update_replay"] {
            stage(name, false);
        }
    }

    let importance = clock.time("explain", || explain_stage(cfg, &initial, &updates, normalized, &update_buffers))?;
    stage("explain", importance.is_some());

    let mut report_config = cfg.clone();
    report_config.output_dir = None;
    Ok(RunReport {
        config: report_config,
        dataset: DatasetSummary {
            source,
            rows: raw.len(),
            start: raw.timestamps[0],
            end: raw.timestamps[raw.len() - 1],
            sampling_interval_secs: raw.sampling_interval_secs,
            batches,
        },
        baseline_policy,
        replay: first.state,
        trigger,
        firing_days,
        drift,
        buffer,
        updates,
        importance,
        stages,
        timings: clock.0,
        artifacts: RunArtifacts {
            initial: Some(initial.model.clone()),
            deployed: deployed_models,
            timestamps: raw.timestamps.clone(),
            targets: normalized.targets().to_vec(),
            stream_start,
            stale_predictions: stale_all,
            strategy_predictions,
        },
        training: initial.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::{SearchSpace, TrainBudget};

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = train_test_split(100, 0.2, 7);
        assert_eq!(b.len(), 20);
        assert_eq!(a.len(), 80);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(train_test_split(100, 0.2, 7), (a, b.clone()));
        assert_ne!(train_test_split(100, 0.2, 8).1, b);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Data(DataError::Empty).exit_code(), 3);
        assert_eq!(PipelineError::from(TuningError::AllDiverged(vec![])).exit_code(), 4);
        assert_eq!(PipelineError::from(MonitorError::EmptyStream).exit_code(), 3);
    }

    fn small(days: u32, drift: bool) -> PipelineConfig {
        PipelineConfig {
            data: DataSource::Synthetic {
                days,
                interval_secs: 1800,
                drift: drift.then(|| crate::data::DriftInjection::plant_default(6.0)),
                seed: None,
            },
            batch_days: 2.0,
            search: SearchSpace {
                hidden_widths: vec![8],
                hidden_depths: vec![1],
                learning_rates: vec![1e-2],
            },
            initial_budget: TrainBudget {
                max_epochs: 200,
                patience: 20,
                mini_batch_size: 32,
            },
            update_budget: TrainBudget {
                max_epochs: 50,
                patience: 10,
                mini_batch_size: 32,
            },
            explain: None,
            drift: crate::drift::DriftSettings {
                permutations: 99,
                ..Default::default()
            },
            seed: 3,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn too_short_data_is_a_data_error() {
        let err = run_pipeline(&small(4, false)).err().unwrap();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn stages_appear_once() {
        let r = run_pipeline(&small(12, true)).unwrap();
        let names: Vec<_> = r.stages.iter().map(|s| s.stage).collect();
        assert_eq!(
            names,
            ["acquire", "train", "replay", "drift", "buffer", "update", "post_update_replay", "explain"]
        );
        assert_eq!(r.drift.is_some(), r.trigger.is_some());
        assert_eq!(r.updates.is_empty(), r.trigger.is_none());
    }
}
