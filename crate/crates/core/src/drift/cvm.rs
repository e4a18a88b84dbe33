use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DriftError;

pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvmResult {
    pub statistic: f64,
    /// `(1 + #{permuted >= observed}) / (permutations + 1)`.
    pub p_value: f64,
    pub n_ref: usize,
    pub n_cur: usize,
    pub permutations: usize,
}

/// Ranks of `values` within themselves, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Statistic from combined-sample ranks of the reference (`ref_ranks`) and
/// current (`cur_ranks`) samples. Both slices are sorted in place.
fn statistic_from_ranks(ref_ranks: &mut [f64], cur_ranks: &mut [f64]) -> f64 {
    ref_ranks.sort_by(f64::total_cmp);
    cur_ranks.sort_by(f64::total_cmp);
    let n = ref_ranks.len() as f64;
    let m = cur_ranks.len() as f64;
    let sum_sq = |r: &[f64]| {
        r.iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = v - (i + 1) as f64;
                d * d
            })
            .sum::<f64>()
    };
    let u = n * sum_sq(ref_ranks) + m * sum_sq(cur_ranks);
    // single rounding: (6U - nm(4nm - 1)) / (6nm(n + m))
    (6.0 * u - n * m * (4.0 * n * m - 1.0)) / (6.0 * n * m * (n + m))
}

/// Two-sample Cramér–von Mises statistic
/// `T = U / (nm(n+m)) - (4nm - 1) / (6(n+m))`.
pub fn cvm_statistic(reference: &[f64], current: &[f64]) -> f64 {
    let pooled: Vec<f64> = reference.iter().chain(current).copied().collect();
    let ranks = average_ranks(&pooled);
    let (mut r, mut s) = (ranks[..reference.len()].to_vec(), ranks[reference.len()..].to_vec());
    statistic_from_ranks(&mut r, &mut s)
}

/// Statistic plus a seeded permutation p-value. Permutation `k` shuffles the
/// pooled ranks with its own generator (stream `k` of `seed`), so the result
/// does not depend on evaluation order.
pub fn cvm_two_sample(reference: &[f64], current: &[f64], permutations: usize, seed: u64) -> Result<CvmResult, DriftError> {
    if reference.is_empty() || current.is_empty() {
        return Err(DriftError::TooFewSamples {
            needed: 1,
            reference: reference.len(),
            current: current.len(),
        });
    }
    if permutations < MIN_PERMUTATIONS {
        return Err(DriftError::Invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations required, got {permutations}"
        )));
    }
    if reference.iter().chain(current).any(|v| !v.is_finite()) {
        return Err(DriftError::Invalid("non-finite sample".into()));
    }
    let n = reference.len();
    let pooled: Vec<f64> = reference.iter().chain(current).copied().collect();
    let ranks = average_ranks(&pooled);
    let observed = {
        let (mut r, mut s) = (ranks[..n].to_vec(), ranks[n..].to_vec());
        statistic_from_ranks(&mut r, &mut s)
    };

    let mut shuffled = ranks.clone();
    let mut exceed = 0usize;
    for k in 0..permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        shuffled.copy_from_slice(&ranks);
        shuffled.shuffle(&mut rng);
        let (r, s) = shuffled.split_at_mut(n);
        if statistic_from_ranks(r, s) >= observed {
            exceed += 1;
        }
    }
    Ok(CvmResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        n_ref: n,
        n_cur: current.len(),
        permutations,
    })
}
