use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Regression quality on one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Coefficient of determination; absent when the targets are constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{targets} targets but {predictions} predictions")]
    LengthMismatch { targets: usize, predictions: usize },
    #[error("at least two values are needed, got {0}")]
    TooShort(usize),
    #[error("R^2 undefined for constant targets (rmse {rmse}, mae {mae})")]
    UndefinedR2 { rmse: f64, mae: f64 },
}

pub fn rmse(targets: ArrayView1<'_, f64>, predictions: ArrayView1<'_, f64>) -> f64 {
    let n = targets.len() as f64;
    let sse: f64 = targets
        .iter()
        .zip(predictions.iter())
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    (sse / n).sqrt()
}

pub fn mae(targets: ArrayView1<'_, f64>, predictions: ArrayView1<'_, f64>) -> f64 {
    let n = targets.len() as f64;
    targets
        .iter()
        .zip(predictions.iter())
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / n
}

impl Metrics {
    /// Like [`compute_metrics`] but leaves `r2` empty instead of failing on
    /// constant or single-value targets. Lengths must still match and be > 0.
    pub fn lenient(targets: ArrayView1<'_, f64>, predictions: ArrayView1<'_, f64>) -> Result<Self, MetricsError> {
        match compute_metrics(targets, predictions) {
            Ok(m) => Ok(m),
            Err(MetricsError::UndefinedR2 { rmse, mae }) => Ok(Self {
                r2: None,
                rmse,
                mae,
                n: targets.len(),
            }),
            Err(MetricsError::TooShort(1)) => Ok(Self {
                r2: None,
                rmse: rmse(targets, predictions),
                mae: mae(targets, predictions),
                n: 1,
            }),
            Err(e) => Err(e),
        }
    }
}

/// R^2 = 1 - SSres/SStot, RMSE and MAE.
pub fn compute_metrics(targets: ArrayView1<'_, f64>, predictions: ArrayView1<'_, f64>) -> Result<Metrics, MetricsError> {
    if targets.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            targets: targets.len(),
            predictions: predictions.len(),
        });
    }
    let n = targets.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    let rmse = rmse(targets, predictions);
    let mae = mae(targets, predictions);
    let mean = targets.sum() / n as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::UndefinedR2 { rmse, mae });
    }
    let ss_res: f64 = targets
        .iter()
        .zip(predictions.iter())
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(Metrics {
        r2: Some(1.0 - ss_res / ss_tot),
        rmse,
        mae,
        n,
    })
}
