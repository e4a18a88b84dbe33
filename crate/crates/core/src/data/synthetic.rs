//! Synthetic air-preheater data driven by a daily load cycle.
//!
//! A latent unit load follows a trapezoid every 24 h (low overnight, ramp up,
//! hold, ramp down). Eight operating variables are affine in the load plus
//! Gaussian sensor noise, so they are strongly but not perfectly correlated.
//! The differential pressure target is a quadratic in the secondary air
//! outlet temperature (the load proxy) plus an interaction between the flue
//! gas inlet and primary air outlet temperatures.
//!
//! Drift acts on the observed inputs only, from the injection instant on:
//! the pressure still follows the undisturbed process state, so the learned
//! input/target mapping changes (concept drift) while the input
//! distributions shift (data drift).

use std::f64::consts::PI;

use chrono::{TimeZone, Utc};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, FeatureSchema};

pub const PLANT_INPUTS: [&str; 8] = [
    "Flue Gas Inlet Temperature",
    "Flue Gas Outlet Temperature",
    "Secondary Air Inlet Temperature",
    "Secondary Air Outlet Temperature",
    "Primary Air Inlet Temperature",
    "Primary Air Outlet Temperature",
    "Oxygen Inlet",
    "Oxygen Outlet",
];
pub const PLANT_TARGET: &str = "Flue Gas DP";
pub const PLANT_TIMESTAMP: &str = "Timestamp";

// (offset, load slope, sensor noise sd)
const SENSORS: [(f64, f64, f64); 8] = [
    (330.0, 40.0, 1.5),
    (120.0, 25.0, 1.0),
    (30.0, 6.0, 0.8),
    (285.0, 45.0, 1.2),
    (35.0, 8.0, 0.8),
    (270.0, 35.0, 1.5),
    (5.5, -2.0, 0.1),
    (6.5, -2.0, 0.12),
];

const LOAD_PROXY: usize = 3;
const TARGET_NOISE_FRACTION: f64 = 0.02;

pub fn plant_schema() -> FeatureSchema {
    FeatureSchema::new(PLANT_INPUTS, PLANT_TARGET, PLANT_TIMESTAMP).expect("static schema is valid")
}

/// Distortion applied to the observed inputs from `start_day` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftInjection {
    /// Days since the start of the series at which drift begins.
    pub start_day: f64,
    /// Per-feature mean shift in units of the feature's pre-drift std.
    pub mean_shift: Vec<f64>,
    /// Per-feature multiplicative change of the spread around the mean.
    pub scale: Vec<f64>,
    /// Correlation mixing in [0, 1]: feature pairs (0,1), (2,3), ... are
    /// rotated by `rotation * pi/2` in standardized coordinates.
    pub rotation: f64,
    /// Sampling interval after the drift point; unchanged when absent.
    pub sampling_interval_secs: Option<i64>,
}

impl DriftInjection {
    pub fn none(start_day: f64) -> Self {
        Self {
            start_day,
            mean_shift: vec![0.0; PLANT_INPUTS.len()],
            scale: vec![1.0; PLANT_INPUTS.len()],
            rotation: 0.0,
            sampling_interval_secs: None,
        }
    }

    /// The default injection used by the demo pipeline: a strong shift of
    /// the primary air inlet temperature, milder shifts elsewhere, some
    /// correlation mixing and 8-minute sampling.
    pub fn plant_default(start_day: f64) -> Self {
        Self {
            start_day,
            mean_shift: vec![0.5, 0.0, 1.0, 1.5, 3.0, 0.5, 0.0, -1.0],
            scale: vec![1.0, 1.1, 1.0, 1.2, 1.0, 1.0, 0.9, 1.0],
            rotation: 0.3,
            sampling_interval_secs: Some(480),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let d = PLANT_INPUTS.len();
        if self.mean_shift.len() != d || self.scale.len() != d {
            return Err(DataError::Invalid(format!(
                "drift injection needs {d} shifts and {d} scales"
            )));
        }
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(DataError::Invalid("drift scale factors must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.rotation) {
            return Err(DataError::Invalid("rotation strength must lie in [0, 1]".into()));
        }
        if self.mean_shift.iter().any(|s| !s.is_finite()) || !self.start_day.is_finite() {
            return Err(DataError::Invalid("drift parameters must be finite".into()));
        }
        if matches!(self.sampling_interval_secs, Some(s) if s <= 0) {
            return Err(DataError::Invalid("sampling interval must be positive".into()));
        }
        Ok(())
    }
}

/// Trapezoidal daily load between `base` and `peak`; `hour` in [0, 24).
fn daily_load(hour: f64, base: f64, peak: f64) -> f64 {
    let frac = if hour < 6.0 {
        0.0
    } else if hour < 9.0 {
        (hour - 6.0) / 3.0
    } else if hour < 18.0 {
        1.0
    } else if hour < 22.0 {
        1.0 - (hour - 18.0) / 4.0
    } else {
        0.0
    };
    base + (peak - base) * frac
}

fn pressure(x: &[f64]) -> f64 {
    let p = (x[LOAD_PROXY] - SENSORS[LOAD_PROXY].0) / SENSORS[LOAD_PROXY].1;
    let a = (x[0] - 350.0) / 20.0;
    let b = (x[5] - 287.5) / 17.5;
    400.0 + 300.0 * p + 900.0 * p * p + 60.0 * a * b
}

/// Generate `days` of plant-like data starting 2024-01-01T00:00:00Z.
pub fn generate_synthetic(
    days: u32,
    interval_secs: i64,
    drift: Option<&DriftInjection>,
    seed: u64,
) -> Result<Dataset, DataError> {
    if days < 1 {
        return Err(DataError::Invalid("days must be >= 1".into()));
    }
    if interval_secs <= 0 {
        return Err(DataError::Invalid("interval must be positive".into()));
    }
    if let Some(d) = drift {
        d.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = i64::from(days) * 86_400;
    let drift_at = drift.map(|d| (d.start_day * 86_400.0).round() as i64);

    let day_levels: Vec<(f64, f64)> = (0..days)
        .map(|_| (0.45 + 0.1 * rng.random::<f64>(), 0.85 + 0.15 * rng.random::<f64>()))
        .collect();

    let mut offsets = Vec::new();
    let mut t = 0i64;
    while t < total {
        offsets.push(t);
        let step = match (drift, drift_at) {
            (Some(d), Some(at)) if t >= at => d.sampling_interval_secs.unwrap_or(interval_secs),
            _ => interval_secs,
        };
        t += step;
    }

    let d = PLANT_INPUTS.len();
    let n = offsets.len();
    let mut inputs = Array2::<f64>::zeros((n, d));
    let mut clean_target = Vec::with_capacity(n);
    for (i, &t) in offsets.iter().enumerate() {
        let day = (t / 86_400) as usize;
        let hour = (t % 86_400) as f64 / 3600.0;
        let (base, peak) = day_levels[day];
        let load = daily_load(hour, base, peak);
        let ambient = (2.0 * PI * (hour - 9.0) / 24.0).sin();
        for (j, &(offset, slope, noise)) in SENSORS.iter().enumerate() {
            let mut v = offset + slope * load + noise * rng.sample::<f64, _>(StandardNormal);
            if j == 2 || j == 4 {
                v += 3.0 * ambient;
            }
            inputs[[i, j]] = v;
        }
        clean_target.push(pressure(inputs.row(i).as_slice().expect("row-major")));
    }

    let (lo, hi) = clean_target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let noise_sd = TARGET_NOISE_FRACTION * (hi - lo);
    let normal = rand_distr::Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let target: Vec<f64> = clean_target.iter().map(|&v| v + normal.sample(&mut rng)).collect();

    if let (Some(inj), Some(at)) = (drift, drift_at) {
        let first = offsets.partition_point(|&t| t < at);
        let reference = if first >= 2 { 0..first } else { 0..n };
        let stats: Vec<(f64, f64)> = (0..d)
            .map(|j| {
                let col: Vec<f64> = reference.clone().map(|i| inputs[[i, j]]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
                (mean, var.sqrt().max(1e-12))
            })
            .collect();
        let theta = inj.rotation * PI / 2.0;
        let (sin, cos) = theta.sin_cos();
        let mut z = vec![0.0; d];
        for i in first..n {
            for j in 0..d {
                z[j] = (inputs[[i, j]] - stats[j].0) / stats[j].1;
            }
            for pair in (0..d - 1).step_by(2) {
                let (a, b) = (z[pair], z[pair + 1]);
                z[pair] = cos * a - sin * b;
                z[pair + 1] = sin * a + cos * b;
            }
            for j in 0..d {
                let shifted = inj.scale[j] * z[j] + inj.mean_shift[j];
                inputs[[i, j]] = stats[j].0 + stats[j].1 * shifted;
            }
        }
    }

    let mut rows = Array2::<f64>::zeros((n, d + 1));
    rows.slice_mut(ndarray::s![.., ..d]).assign(&inputs);
    for (i, v) in target.into_iter().enumerate() {
        rows[[i, d]] = v;
    }
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid start");
    let timestamps = offsets
        .iter()
        .map(|&s| t0 + chrono::Duration::seconds(s))
        .collect::<Vec<_>>();
    let interval = super::median_interval_secs(&timestamps).unwrap_or(interval_secs as f64);
    Dataset::new(plant_schema(), timestamps, rows, interval)
}
