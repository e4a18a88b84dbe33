//! Distribution drift between a reference and a current window: population
//! stability index, two-sample Cramér–von Mises with a permutation p-value,
//! and change of the Pearson correlation structure.

mod correlation;
mod cvm;
mod psi;

pub use correlation::{correlation_matrix, correlation_shift, CorrelationShift};
pub use cvm::{average_ranks, cvm_statistic, cvm_two_sample, CvmResult, MIN_PERMUTATIONS};
pub use psi::{psi, psi_from_proportions, PsiResult, PROPORTION_FLOOR};

pub(crate) use psi::quantile_sorted;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("too few samples: need {needed}, reference has {reference}, current has {current}")]
    TooFewSamples {
        needed: usize,
        reference: usize,
        current: usize,
    },
    #[error("windows have different schemas")]
    SchemaMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSettings {
    pub bins: usize,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            bins: 10,
            permutations: 999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDrift {
    pub feature: String,
    pub psi: PsiResult,
    pub cvm: CvmResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub features: Vec<FeatureDrift>,
    pub correlation: CorrelationShift,
}

/// Drift of every value column (inputs and target). Column `j` uses
/// permutation seed `settings.seed + j`.
pub fn drift_report(reference: &Dataset, current: &Dataset, settings: &DriftSettings) -> Result<DriftReport, DriftError> {
    if reference.schema != current.schema {
        return Err(DriftError::SchemaMismatch);
    }
    let correlation = correlation_shift(reference, current)?;
    let features = reference
        .schema
        .value_columns()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let a = reference.rows.column(j).to_vec();
            let b = current.rows.column(j).to_vec();
            Ok(FeatureDrift {
                feature: name.to_string(),
                psi: psi(&a, &b, settings.bins)?,
                cvm: cvm_two_sample(&a, &b, settings.permutations, settings.seed.wrapping_add(j as u64))?,
            })
        })
        .collect::<Result<Vec<_>, DriftError>>()?;
    Ok(DriftReport { features, correlation })
}

/// Per-feature table: feature, psi, cvm, p, n_ref, n_cur.
pub fn write_feature_table<W: Write>(report: &DriftReport, writer: W) -> Result<(), DriftError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "psi", "cvm", "p", "n_ref", "n_cur"])?;
    for f in &report.features {
        w.write_record([
            f.feature.clone(),
            f.psi.psi.to_string(),
            f.cvm.statistic.to_string(),
            f.cvm.p_value.to_string(),
            f.cvm.n_ref.to_string(),
            f.cvm.n_cur.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
