use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::DriftError;
use crate::data::Dataset;

/// Pearson correlation structure of two windows. Entries involving a
/// zero-variance column are `None` and excluded from `max_abs_change`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationShift {
    pub columns: Vec<String>,
    pub reference: Vec<Vec<Option<f64>>>,
    pub current: Vec<Vec<Option<f64>>>,
    pub max_abs_change: Option<f64>,
    pub undefined_columns: Vec<String>,
}

/// Symmetric Pearson matrix with an exact unit diagonal for defined columns.
pub fn correlation_matrix(data: ArrayView2<'_, f64>) -> Vec<Vec<Option<f64>>> {
    let (n, d) = data.dim();
    let means: Vec<f64> = data.columns().into_iter().map(|c| c.sum() / n as f64).collect();
    let centered = |j: usize| data.column(j).mapv(|v| v - means[j]);
    let cols: Vec<_> = (0..d).map(centered).collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.dot(c).sqrt()).collect();
    let mut out = vec![vec![None; d]; d];
    for i in 0..d {
        if norms[i] == 0.0 {
            continue;
        }
        out[i][i] = Some(1.0);
        for j in i + 1..d {
            if norms[j] == 0.0 {
                continue;
            }
            let r = (cols[i].dot(&cols[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out[i][j] = Some(r);
            out[j][i] = Some(r);
        }
    }
    out
}

pub fn correlation_shift(reference: &Dataset, current: &Dataset) -> Result<CorrelationShift, DriftError> {
    if reference.schema != current.schema {
        return Err(DriftError::SchemaMismatch);
    }
    if reference.len() < 3 || current.len() < 3 {
        return Err(DriftError::TooFewSamples {
            needed: 3,
            reference: reference.len(),
            current: current.len(),
        });
    }
    let columns: Vec<String> = reference.schema.value_columns().iter().map(|c| c.to_string()).collect();
    let ref_m = correlation_matrix(reference.rows.view());
    let cur_m = correlation_matrix(current.rows.view());
    let undefined_columns = columns
        .iter()
        .enumerate()
        .filter(|(j, _)| ref_m[*j][*j].is_none() || cur_m[*j][*j].is_none())
        .map(|(_, c)| c.clone())
        .collect();
    let max_abs_change = ref_m
        .iter()
        .flatten()
        .zip(cur_m.iter().flatten())
        .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
        .reduce(f64::max);
    Ok(CorrelationShift {
        columns,
        reference: ref_m,
        current: cur_m,
        max_abs_change,
        undefined_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use chrono::{TimeZone, Utc};
    use ndarray::Array2;

    fn window(rows: Array2<f64>) -> Dataset {
        let schema = FeatureSchema::new(["x", "z"], "y", "t").unwrap();
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let ts = (0..rows.nrows()).map(|i| t0 + chrono::Duration::minutes(i as i64)).collect();
        Dataset::new(schema, ts, rows, 60.0).unwrap()
    }

    #[test]
    fn identical_windows_do_not_change() {
        let w = window(Array2::from_shape_fn((20, 3), |(i, j)| ((i * (j + 2)) as f64).sin()));
        let s = correlation_shift(&w, &w).unwrap();
        assert_eq!(s.max_abs_change, Some(0.0));
        for i in 0..3 {
            assert_eq!(s.reference[i][i], Some(1.0));
            for j in 0..3 {
                assert_eq!(s.reference[i][j], s.reference[j][i]);
            }
        }
    }

    #[test]
    fn perfect_to_anti_correlation_changes_by_two() {
        let a = window(Array2::from_shape_fn((10, 3), |(i, j)| if j == 2 { (i % 3) as f64 } else { i as f64 }));
        let b = window(Array2::from_shape_fn((10, 3), |(i, j)| match j {
            0 => i as f64,
            1 => -(i as f64),
            _ => (i % 3) as f64,
        }));
        let s = correlation_shift(&a, &b).unwrap();
        assert!((s.max_abs_change.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_flagged_not_fatal() {
        let a = window(Array2::from_shape_fn((8, 3), |(i, j)| if j == 1 { 4.0 } else { (i * (j + 1)) as f64 }));
        let s = correlation_shift(&a, &a).unwrap();
        assert_eq!(s.undefined_columns, vec!["z".to_string()]);
        assert_eq!(s.reference[1][0], None);
        assert_eq!(s.max_abs_change, Some(0.0));
    }

    #[test]
    fn short_windows_are_rejected() {
        let a = window(Array2::zeros((2, 3)));
        assert!(correlation_shift(&a, &a).is_err());
    }
}
