//! Production replay of a deployed model with a daily-error failure trigger.
//!
//! Rows are grouped by UTC calendar date. A day is exceeded when its RMSE
//! and MAE both sit above `multiplier` times the test-time baselines
//! (either one under [`ExceedanceRule::Either`]). The trigger fires at the
//! end of the `consecutive_days`-th exceeded day in a row.

use std::io::Write;
use std::ops::Range;

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{mae, rmse, AnnError, Predictor};
use crate::data::{Batch, Dataset};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("empty stream")]
    EmptyStream,
    #[error("invalid trigger policy: {0}")]
    Policy(String),
    #[error("fire date {0} is not covered by any batch")]
    FireOutsideBatches(NaiveDate),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedanceRule {
    /// RMSE and MAE must both exceed their thresholds.
    #[default]
    Both,
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerPolicy {
    pub rmse_baseline: f64,
    pub mae_baseline: f64,
    pub multiplier: f64,
    pub consecutive_days: usize,
    pub rule: ExceedanceRule,
}

impl TriggerPolicy {
    /// Twice the baselines on three consecutive days.
    pub fn new(rmse_baseline: f64, mae_baseline: f64) -> Self {
        Self {
            rmse_baseline,
            mae_baseline,
            multiplier: 2.0,
            consecutive_days: 3,
            rule: ExceedanceRule::Both,
        }
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if !(self.multiplier > 1.0) {
            return Err(MonitorError::Policy(format!("multiplier must be > 1, got {}", self.multiplier)));
        }
        if self.consecutive_days == 0 {
            return Err(MonitorError::Policy("consecutive_days must be >= 1".into()));
        }
        if !(self.rmse_baseline > 0.0 && self.mae_baseline > 0.0) {
            return Err(MonitorError::Policy("baselines must be > 0".into()));
        }
        Ok(())
    }

    pub fn exceeded(&self, daily_rmse: f64, daily_mae: f64) -> bool {
        let r = daily_rmse > self.multiplier * self.rmse_baseline;
        let m = daily_mae > self.multiplier * self.mae_baseline;
        match self.rule {
            ExceedanceRule::Both => r && m,
            ExceedanceRule::Either => r || m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub rows: usize,
    pub rmse: f64,
    pub mae: f64,
    pub exceeded: bool,
    /// Length of the trailing run of exceeded days, this day included.
    pub counter: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerState {
    pub records: Vec<DailyRecord>,
    pub counter: usize,
    pub fired_on: Option<NaiveDate>,
}

impl TriggerState {
    /// Fold one day into the state. Returns true when this day fires the
    /// trigger. Days after a fire are still recorded but never re-fire.
    pub fn observe(&mut self, date: NaiveDate, rows: usize, rmse: f64, mae: f64, exceeded: bool, consecutive_days: usize) -> bool {
        self.counter = if exceeded { self.counter + 1 } else { 0 };
        self.records.push(DailyRecord {
            date,
            rows,
            rmse,
            mae,
            exceeded,
            counter: self.counter,
        });
        if self.fired_on.is_none() && self.counter >= consecutive_days {
            self.fired_on = Some(date);
            return true;
        }
        false
    }

    /// The dates of the run of exceeded days that fired the trigger.
    pub fn firing_run(&self) -> Vec<NaiveDate> {
        let Some(fired) = self.fired_on else {
            return Vec::new();
        };
        let end = self.records.iter().position(|r| r.date == fired).expect("fired day is recorded");
        let len = self.records[end].counter;
        self.records[end + 1 - len..=end].iter().map(|r| r.date).collect()
    }
}

/// Contiguous row ranges sharing a UTC calendar date.
pub fn day_buckets(stream: &Dataset) -> Vec<(NaiveDate, Range<usize>)> {
    let mut out: Vec<(NaiveDate, Range<usize>)> = Vec::new();
    for i in 0..stream.len() {
        let date = stream.date_of(i);
        match out.last_mut() {
            Some((d, r)) if *d == date => r.end = i + 1,
            _ => out.push((date, i..i + 1)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub state: TriggerState,
    /// One entry per stream row; `None` for rows after the fire point.
    pub predictions: Vec<Option<f64>>,
    /// Number of leading rows that were predicted.
    pub predicted_rows: usize,
}

fn run_replay(
    predictor: &dyn Predictor,
    stream: &Dataset,
    policy: &TriggerPolicy,
    armed: bool,
) -> Result<ReplayOutcome, MonitorError> {
    if stream.is_empty() {
        return Err(MonitorError::EmptyStream);
    }
    policy.validate()?;
    let inputs = stream.inputs();
    let targets = stream.targets();
    let mut state = TriggerState::default();
    let mut predictions = vec![None; stream.len()];
    let mut predicted_rows = 0;
    for (date, range) in day_buckets(stream) {
        let x = inputs.slice(s![range.clone(), ..]);
        let y = targets.slice(s![range.clone()]);
        let pred = predictor.predict(x)?;
        let (r, m) = (rmse(y, pred.view()), mae(y, pred.view()));
        for (slot, p) in predictions[range.clone()].iter_mut().zip(pred.iter()) {
            *slot = Some(*p);
        }
        predicted_rows = range.end;
        let fired = state.observe(date, range.len(), r, m, policy.exceeded(r, m), policy.consecutive_days);
        if fired && armed {
            break;
        }
    }
    Ok(ReplayOutcome {
        state,
        predictions,
        predicted_rows,
    })
}

/// Replay `stream` (already normalized with the model's scaler) and stop at
/// the end of the day that fires the trigger.
pub fn replay(predictor: &dyn Predictor, stream: &Dataset, policy: &TriggerPolicy) -> Result<ReplayOutcome, MonitorError> {
    run_replay(predictor, stream, policy, true)
}

/// Replay the whole stream; exceedances are recorded but never halt it.
pub fn replay_unarmed(predictor: &dyn Predictor, stream: &Dataset, policy: &TriggerPolicy) -> Result<ReplayOutcome, MonitorError> {
    run_replay(predictor, stream, policy, false)
}

/// Rows used to repair a failed model: the batch holding the fire point and
/// the batch right before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateBuffer {
    pub failing: Batch,
    pub previous: Option<Batch>,
    /// Set when the failing batch has no predecessor.
    pub degenerate: bool,
    pub start_row: usize,
    pub end_row: usize,
    #[serde(skip)]
    pub inputs: Array2<f64>,
    #[serde(skip)]
    pub targets: Array1<f64>,
}

impl UpdateBuffer {
    pub fn len(&self) -> usize {
        self.end_row - self.start_row
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn assemble_update_buffer(stream: &Dataset, batches: &[Batch], fire_date: NaiveDate) -> Result<UpdateBuffer, MonitorError> {
    let fire_row = (0..stream.len())
        .rev()
        .find(|&i| stream.date_of(i) == fire_date)
        .ok_or(MonitorError::FireOutsideBatches(fire_date))?;
    let pos = batches
        .iter()
        .position(|b| b.contains_row(fire_row))
        .ok_or(MonitorError::FireOutsideBatches(fire_date))?;
    let failing = batches[pos].clone();
    let previous = pos
        .checked_sub(1)
        .map(|p| batches[p].clone())
        .filter(|p| p.end == failing.start);
    let start_row = previous.as_ref().map_or(failing.start, |p| p.start);
    let end_row = failing.end;
    Ok(UpdateBuffer {
        degenerate: previous.is_none(),
        failing,
        previous,
        start_row,
        end_row,
        inputs: stream.inputs().slice(s![start_row..end_row, ..]).to_owned(),
        targets: stream.targets().slice(s![start_row..end_row]).to_owned(),
    })
}

/// Daily error table: model, date, rows, rmse, mae, exceeded, counter.
pub fn write_daily_csv<W: Write>(
    label: &str,
    state: &TriggerState,
    writer: &mut csv::Writer<W>,
    write_header: bool,
) -> Result<(), MonitorError> {
    if write_header {
        writer.write_record(["model", "date", "rows", "rmse", "mae", "exceeded", "counter"])?;
    }
    for r in &state.records {
        writer.write_record([
            label.to_string(),
            r.date.to_string(),
            r.rows.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.exceeded.to_string(),
            r.counter.to_string(),
        ])?;
    }
    Ok(())
}

/// Trigger event as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub fire_date: NaiveDate,
    pub policy: TriggerPolicy,
    pub failing_batch: usize,
    pub previous_batch: Option<usize>,
    pub buffer_rows: usize,
    pub degenerate_buffer: bool,
}

impl TriggerEvent {
    pub fn new(fire_date: NaiveDate, policy: &TriggerPolicy, buffer: &UpdateBuffer) -> Self {
        Self {
            fire_date,
            policy: policy.clone(),
            failing_batch: buffer.failing.index,
            previous_batch: buffer.previous.as_ref().map(|b| b.index),
            buffer_rows: buffer.len(),
            degenerate_buffer: buffer.degenerate,
        }
    }
}

/// Rows of `stream` whose date is in `dates`, as a sub-dataset.
pub fn rows_on_dates(stream: &Dataset, dates: &[NaiveDate]) -> Dataset {
    let idx: Vec<usize> = (0..stream.len()).filter(|&i| dates.contains(&stream.date_of(i))).collect();
    stream.select(&idx)
}

/// Predictions stacked from `predictor` over a row range.
pub fn predict_rows(predictor: &dyn Predictor, stream: &Dataset, range: Range<usize>) -> Result<Array1<f64>, MonitorError> {
    let x = stream.inputs().slice_axis(Axis(0), (range.start..range.end).into()).to_owned();
    Ok(predictor.predict(x.view())?)
}
