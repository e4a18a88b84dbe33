use ndarray::{ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Per-column min-max scaler. Fitted once on training data and reused for
/// every later window so that drift shows up as out-of-range values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<String>,
    #[serde(with = "crate::numfmt::vec")]
    pub min: Vec<f64>,
    #[serde(with = "crate::numfmt::vec")]
    pub max: Vec<f64>,
}

impl Scaler {
    fn position(&self, name: &str) -> Result<usize, DataError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnseenColumn(name.to_string()))
    }

    /// (v - min) / (max - min); constant columns map to 0. No clipping.
    pub fn transform_value(&self, column: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[column], self.max[column]);
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn inverse_value(&self, column: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[column], self.max[column]);
        if hi > lo {
            v * (hi - lo) + lo
        } else {
            lo
        }
    }

    /// Map a normalized target vector back to physical units.
    pub fn inverse_column(&self, name: &str, values: ArrayView1<'_, f64>) -> Result<Vec<f64>, DataError> {
        let j = self.position(name)?;
        Ok(values.iter().map(|&v| self.inverse_value(j, v)).collect())
    }

    pub fn inverse(&self, data: &Dataset) -> Result<Dataset, DataError> {
        self.map_columns(data, Self::inverse_value)
    }

    fn map_columns(&self, data: &Dataset, f: fn(&Self, usize, f64) -> f64) -> Result<Dataset, DataError> {
        let index = data
            .schema
            .value_columns()
            .into_iter()
            .map(|c| self.position(c))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = data.rows.clone();
        for (mut col, &j) in rows.axis_iter_mut(Axis(1)).zip(&index) {
            col.mapv_inplace(|v| f(self, j, v));
        }
        Ok(Dataset { rows, ..data.clone() })
    }
}

pub fn fit_scaler(data: &Dataset, columns: &[&str]) -> Result<Scaler, DataError> {
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    let mut min = Vec::with_capacity(columns.len());
    let mut max = Vec::with_capacity(columns.len());
    for name in columns {
        let col = data
            .column(name)
            .ok_or_else(|| DataError::Schema(format!("unknown column `{name}`")))?;
        min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(Scaler {
        columns: columns.iter().map(|c| c.to_string()).collect(),
        min,
        max,
    })
}

/// Normalized copy of `data`. Every value column must be known to the scaler.
pub fn apply_scaler(scaler: &Scaler, data: &Dataset) -> Result<Dataset, DataError> {
    scaler.map_columns(data, Scaler::transform_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use chrono::{TimeZone, Utc};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn dataset(rows: Array2<f64>) -> Dataset {
        let schema = FeatureSchema::new(["a"], "y", "t").unwrap();
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let ts = (0..rows.nrows())
            .map(|i| t0 + chrono::Duration::minutes(10 * i as i64))
            .collect();
        Dataset::new(schema, ts, rows, 600.0).unwrap()
    }

    #[test]
    fn fits_column_extrema_independently() {
        let d = dataset(array![[2.0, 10.0], [4.0, -1.0], [6.0, 3.0]]);
        let s = fit_scaler(&d, &["a", "y"]).unwrap();
        assert_eq!(s.min, vec![2.0, -1.0]);
        assert_eq!(s.max, vec![6.0, 10.0]);
    }

    #[test]
    fn maps_extremes_without_clipping() {
        let d = dataset(array![[2.0, 0.0], [6.0, 1.0]]);
        let s = fit_scaler(&d, &["a", "y"]).unwrap();
        assert_eq!(s.transform_value(0, 2.0), 0.0);
        assert_eq!(s.transform_value(0, 6.0), 1.0);
        assert_eq!(s.transform_value(0, 7.0), 1.25);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let d = dataset(array![[5.0, 0.0], [5.0, 1.0]]);
        let s = fit_scaler(&d, &["a", "y"]).unwrap();
        assert_eq!((s.min[0], s.max[0]), (5.0, 5.0));
        let n = apply_scaler(&s, &d).unwrap();
        assert!(n.inputs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unseen_column_and_empty_data_are_errors() {
        let d = dataset(array![[1.0, 0.0], [2.0, 1.0]]);
        let s = fit_scaler(&d, &["a"]).unwrap();
        assert!(matches!(apply_scaler(&s, &d), Err(DataError::UnseenColumn(c)) if c == "y"));
        assert!(matches!(fit_scaler(&d.slice(0, 0), &["a"]), Err(DataError::Empty)));
    }

    proptest! {
        #[test]
        fn inverse_after_apply_is_identity(
            values in proptest::collection::vec((-1e6f64..1e6, -1e3f64..1e3), 2..40)
        ) {
            let rows = Array2::from_shape_fn((values.len(), 2), |(i, j)| if j == 0 { values[i].0 } else { values[i].1 });
            let d = dataset(rows);
            let s = fit_scaler(&d, &["a", "y"]).unwrap();
            let back = s.inverse(&apply_scaler(&s, &d).unwrap()).unwrap();
            for (j, (a, b)) in d.rows.columns().into_iter().zip(back.rows.columns()).enumerate() {
                if s.max[j] > s.min[j] {
                    for (x, y) in a.iter().zip(b.iter()) {
                        let scale = x.abs().max(s.max[j] - s.min[j]);
                        prop_assert!((x - y).abs() <= 1e-12 * scale, "{x} vs {y}");
                    }
                }
            }
        }
    }
}
