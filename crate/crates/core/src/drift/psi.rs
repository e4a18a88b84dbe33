use serde::{Deserialize, Serialize};

use super::DriftError;

/// Floor applied to bin proportions before renormalizing.
pub const PROPORTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiResult {
    pub psi: f64,
    /// Inner bin edges; the outer edges are -inf and +inf. A value equal to
    /// an edge falls in the lower bin.
    pub bin_edges: Vec<f64>,
    pub ref_proportions: Vec<f64>,
    pub cur_proportions: Vec<f64>,
}

/// Linearly interpolated quantile of sorted data at probability `p`.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn proportions(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; edges.len() + 1];
    for &v in values {
        counts[edges.partition_point(|&e| e < v)] += 1;
    }
    let n = values.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

fn floor_and_renormalize(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|&v| v.max(PROPORTION_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// `sum (p - q) ln(p / q)` with both proportion vectors floored and
/// renormalized first.
pub fn psi_from_proportions(reference: &[f64], current: &[f64]) -> f64 {
    let p = floor_and_renormalize(reference);
    let q = floor_and_renormalize(current);
    p.iter()
        .zip(&q)
        .map(|(p, q)| (p - q) * (p / q).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Population stability index over `bins` quantile bins of the reference.
pub fn psi(reference: &[f64], current: &[f64], bins: usize) -> Result<PsiResult, DriftError> {
    if bins < 2 {
        return Err(DriftError::Invalid(format!("need at least 2 bins, got {bins}")));
    }
    if reference.len() < bins || current.len() < bins {
        return Err(DriftError::TooFewSamples {
            needed: bins,
            reference: reference.len(),
            current: current.len(),
        });
    }
    if reference.iter().chain(current).any(|v| !v.is_finite()) {
        return Err(DriftError::Invalid("non-finite sample".into()));
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bin_edges: Vec<f64> = (1..bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / bins as f64))
        .collect();
    let ref_raw = proportions(reference, &bin_edges);
    let cur_raw = proportions(current, &bin_edges);
    let psi = psi_from_proportions(&ref_raw, &cur_raw);
    Ok(PsiResult {
        psi,
        bin_edges,
        ref_proportions: floor_and_renormalize(&ref_raw),
        cur_proportions: floor_and_renormalize(&cur_raw),
    })
}
