//! Exact interventional Shapley attribution by enumerating all coalitions,
//! mean-|Shapley| feature importance, and rank stability across versions.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{AnnError, Predictor};

/// Largest feature count handled by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 16;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{0} features exceed the exact limit of 16; restrict the feature set or subsample")]
    TooManyFeatures(usize),
    #[error("background is empty")]
    EmptyBackground,
    #[error("evaluation sample is empty")]
    EmptySample,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least two profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("profile `{0}` has a different feature list")]
    SchemaMismatch(String),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub values: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    pub prediction: f64,
    pub row: Vec<f64>,
}

/// `s! (d - s - 1)! / d!` for `s = 0..d`.
fn coalition_weights(d: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=d).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    })
    .collect();
    (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect()
}

/// Value of every coalition, indexed by bitmask.
fn coalition_values(predictor: &dyn Predictor, row: ArrayView1<'_, f64>, background: ArrayView2<'_, f64>) -> Result<Vec<f64>, ExplainError> {
    let (b, d) = background.dim();
    let masks = 1usize << d;
    let mut stacked = Array2::zeros((masks * b, d));
    for mask in 0..masks {
        for (k, bg) in background.rows().into_iter().enumerate() {
            let mut out = stacked.row_mut(mask * b + k);
            for j in 0..d {
                out[j] = if mask >> j & 1 == 1 { row[j] } else { bg[j] };
            }
        }
    }
    let pred = predictor.predict(stacked.view())?;
    Ok(pred
        .exact_chunks(b)
        .into_iter()
        .map(|c| c.sum() / b as f64)
        .collect())
}

/// Exact Shapley values of `row` against `background`.
pub fn shapley_values(
    predictor: &dyn Predictor,
    row: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
) -> Result<ShapleyAttribution, ExplainError> {
    let d = predictor.input_dim();
    if d > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures(d));
    }
    if background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    for got in [row.len(), background.ncols()] {
        if got != d {
            return Err(ExplainError::DimensionMismatch { expected: d, got });
        }
    }
    let v = coalition_values(predictor, row, background)?;
    let w = coalition_weights(d);
    let mut values = vec![0.0; d];
    for (mask, &vs) in v.iter().enumerate() {
        let size = mask.count_ones() as usize;
        for (j, phi) in values.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *phi += w[size] * (v[mask | 1 << j] - vs);
            }
        }
    }
    Ok(ShapleyAttribution {
        values,
        base_value: v[0],
        prediction: v[v.len() - 1],
        row: row.to_vec(),
    })
}

/// Sorted row indices drawn without replacement; all rows when `k >= n`.
pub fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub background_rows: usize,
    pub eval_rows: usize,
    pub seed: u64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            background_rows: 100,
            eval_rows: 200,
            seed: 0,
        }
    }
}

impl ExplainSettings {
    /// Seeded background and evaluation subsamples.
    pub fn subsample(&self, background: ArrayView2<'_, f64>, eval: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let bg = sample_rows(background.nrows(), self.background_rows, self.seed);
        let ev = sample_rows(eval.nrows(), self.eval_rows, self.seed.wrapping_add(1));
        (background.select(Axis(0), &bg), eval.select(Axis(0), &ev))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub tag: String,
    pub features: Vec<String>,
    /// Mean absolute Shapley value per feature.
    pub importance: Vec<f64>,
    /// Feature indices by descending importance; ties keep feature order.
    pub ranking: Vec<usize>,
}

impl ImportanceProfile {
    pub fn from_importance(tag: impl Into<String>, features: Vec<String>, importance: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..importance.len()).collect();
        ranking.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
        Self {
            tag: tag.into(),
            features,
            importance,
            ranking,
        }
    }

    /// 1-based rank of each feature.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.ranking.len()];
        for (pos, &f) in self.ranking.iter().enumerate() {
            r[f] = pos + 1;
        }
        r
    }

    pub fn top(&self) -> &str {
        &self.features[self.ranking[0]]
    }
}

pub fn importance_profile(
    predictor: &dyn Predictor,
    eval_sample: ArrayView2<'_, f64>,
    background: ArrayView2<'_, f64>,
    features: &[String],
    tag: &str,
) -> Result<ImportanceProfile, ExplainError> {
    if eval_sample.nrows() == 0 {
        return Err(ExplainError::EmptySample);
    }
    if features.len() != predictor.input_dim() {
        return Err(ExplainError::DimensionMismatch {
            expected: predictor.input_dim(),
            got: features.len(),
        });
    }
    let mut total = vec![0.0; features.len()];
    for row in eval_sample.rows() {
        let a = shapley_values(predictor, row, background)?;
        for (t, v) in total.iter_mut().zip(a.values) {
            *t += v.abs();
        }
    }
    let n = eval_sample.nrows() as f64;
    Ok(ImportanceProfile::from_importance(
        tag,
        features.to_vec(),
        total.into_iter().map(|t| t / n).collect(),
    ))
}

/// Kendall tau between two strict rankings of the same items.
pub fn kendall_tau(a: &[usize], b: &[usize]) -> f64 {
    let d = a.len();
    if d < 2 {
        return 1.0;
    }
    let pos = |r: &[usize]| {
        let mut p = vec![0usize; d];
        for (i, &f) in r.iter().enumerate() {
            p[f] = i;
        }
        p
    };
    let (pa, pb) = (pos(a), pos(b));
    let mut s = 0i64;
    for i in 0..d {
        for j in i + 1..d {
            let x = pa[i] < pa[j];
            let y = pb[i] < pb[j];
            s += if x == y { 1 } else { -1 };
        }
    }
    s as f64 / (d * (d - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRow {
    pub version: String,
    pub feature: String,
    pub importance: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStability {
    pub from: String,
    pub to: String,
    pub kendall_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEvolution {
    pub rows: Vec<EvolutionRow>,
    pub stability: Vec<RankStability>,
}

pub fn importance_evolution(profiles: &[ImportanceProfile]) -> Result<ImportanceEvolution, ExplainError> {
    if profiles.len() < 2 {
        return Err(ExplainError::TooFewProfiles(profiles.len()));
    }
    let features = &profiles[0].features;
    if let Some(p) = profiles.iter().find(|p| &p.features != features) {
        return Err(ExplainError::SchemaMismatch(p.tag.clone()));
    }
    let rows = profiles
        .iter()
        .flat_map(|p| {
            let ranks = p.ranks();
            p.features.iter().enumerate().map(move |(j, f)| EvolutionRow {
                version: p.tag.clone(),
                feature: f.clone(),
                importance: p.importance[j],
                rank: ranks[j],
            })
        })
        .collect();
    let stability = profiles
        .windows(2)
        .map(|w| RankStability {
            from: w[0].tag.clone(),
            to: w[1].tag.clone(),
            kendall_tau: kendall_tau(&w[0].ranking, &w[1].ranking),
        })
        .collect();
    Ok(ImportanceEvolution { rows, stability })
}

/// Long-format table: version, feature, importance, rank.
pub fn write_evolution_csv<W: Write>(evolution: &ImportanceEvolution, writer: W) -> Result<(), ExplainError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["version", "feature", "importance", "rank"])?;
    for r in &evolution.rows {
        w.write_record([r.version.clone(), r.feature.clone(), r.importance.to_string(), r.rank.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-row attributions: version, row, feature, value, base_value, prediction.
pub fn write_attributions_csv<W: Write>(
    tag: &str,
    features: &[String],
    attributions: &[ShapleyAttribution],
    writer: &mut csv::Writer<W>,
    write_header: bool,
) -> Result<(), ExplainError> {
    if write_header {
        writer.write_record(["version", "row", "feature", "value", "base_value", "prediction"])?;
    }
    for (i, a) in attributions.iter().enumerate() {
        for (f, v) in features.iter().zip(&a.values) {
            writer.write_record([
                tag.to_string(),
                i.to_string(),
                f.clone(),
                v.to_string(),
                a.base_value.to_string(),
                a.prediction.to_string(),
            ])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::{init_network, Activation, Architecture};
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    struct Func<F>(usize, F);

    impl<F: Fn(&[f64]) -> f64> Predictor for Func<F> {
        fn input_dim(&self) -> usize {
            self.0
        }
        fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>, AnnError> {
            Ok(inputs.rows().into_iter().map(|r| (self.1)(&r.to_vec())).collect())
        }
    }

    /// Average marginal contribution over all d! orderings, with coalition
    /// values computed row by row.
    fn permutation_oracle(f: &dyn Predictor, x: &[f64], bg: &Array2<f64>) -> Vec<f64> {
        let d = x.len();
        let value = |set: &[bool]| -> f64 {
            let mut acc = 0.0;
            for b in bg.rows() {
                let z: Vec<f64> = (0..d).map(|j| if set[j] { x[j] } else { b[j] }).collect();
                acc += f.predict(Array2::from_shape_vec((1, d), z).unwrap().view()).unwrap()[0];
            }
            acc / bg.nrows() as f64
        };
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let all = perms((0..d).collect());
        let mut phi = vec![0.0; d];
        for order in &all {
            let mut set = vec![false; d];
            let mut prev = value(&set);
            for &j in order {
                set[j] = true;
                let cur = value(&set);
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|p| p / all.len() as f64).collect()
    }

    fn random_net(d: usize, seed: u64) -> crate::ann::NetworkModel {
        let arch = Architecture::new(d, vec![5, 3], Activation::Tanh).unwrap();
        init_network(&arch, seed).unwrap()
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn weights_sum_to_one_over_subsets() {
        for d in 1..=16usize {
            let w = coalition_weights(d);
            let mut binom = 1.0;
            let mut total = 0.0;
            for (s, ws) in w.iter().enumerate() {
                total += binom * ws;
                binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
            }
            assert!((total - 1.0).abs() < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn constant_model_gets_zero_values() {
        let f = Func(3, |_: &[f64]| 4.5);
        let a = shapley_values(&f, array![1.0, 2.0, 3.0].view(), random_matrix(4, 3, 0).view()).unwrap();
        assert_eq!(a.values, vec![0.0; 3]);
        assert_eq!(a.base_value, 4.5);
    }

    #[test]
    fn linear_model_against_zero_background() {
        let f = Func(2, |x: &[f64]| 2.0 * x[0] + 3.0 * x[1]);
        let a = shapley_values(&f, array![1.0, 1.0].view(), array![[0.0, 0.0]].view()).unwrap();
        assert!((a.values[0] - 2.0).abs() < 1e-9);
        assert!((a.values[1] - 3.0).abs() < 1e-9);
        assert_eq!(a.base_value, 0.0);
    }

    #[test]
    fn ignored_feature_is_a_null_player() {
        let mut net = random_net(4, 3);
        net.layers[0].weights.column_mut(2).fill(0.0);
        let a = shapley_values(&net, array![0.3, -0.2, 0.9, 0.1].view(), random_matrix(10, 4, 4).view()).unwrap();
        assert!(a.values[2].abs() < 1e-9);
    }

    #[test]
    fn symmetric_features_share_credit() {
        let f = Func(3, |x: &[f64]| (x[0] + x[1]).powi(2) + x[2]);
        let mut bg = random_matrix(6, 3, 5);
        for mut r in bg.rows_mut() {
            r[1] = r[0];
        }
        let a = shapley_values(&f, array![0.7, 0.7, -0.4].view(), bg.view()).unwrap();
        assert!((a.values[0] - a.values[1]).abs() < 1e-9);
    }

    #[test]
    fn matches_permutation_oracle_up_to_five_features() {
        for d in 1..=5 {
            for seed in 0..3 {
                let net = random_net(d, seed);
                let bg = random_matrix(7, d, seed + 100);
                let x = random_matrix(1, d, seed + 200).row(0).to_vec();
                let exact = shapley_values(&net, ArrayView1::from(&x), bg.view()).unwrap();
                let oracle = permutation_oracle(&net, &x, &bg);
                for (a, b) in exact.values.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-9, "d={d} {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn ensemble_attribution_is_member_mean() {
        use crate::update::Ensemble;
        let members: Vec<_> = (0..3).map(|s| random_net(4, s)).collect();
        let bg = random_matrix(8, 4, 9);
        let x = array![0.1, 0.5, -0.3, 0.8];
        let mean: Vec<f64> = (0..4)
            .map(|j| {
                members
                    .iter()
                    .map(|m| shapley_values(m, x.view(), bg.view()).unwrap().values[j])
                    .sum::<f64>()
                    / 3.0
            })
            .collect();
        let e = Ensemble::new(members).unwrap();
        let a = shapley_values(&e, x.view(), bg.view()).unwrap();
        for (p, q) in a.values.iter().zip(&mean) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let f = Func(17, |_: &[f64]| 0.0);
        let row = Array1::zeros(17);
        assert!(matches!(
            shapley_values(&f, row.view(), Array2::zeros((1, 17)).view()),
            Err(ExplainError::TooManyFeatures(17))
        ));
        let g = Func(2, |_: &[f64]| 0.0);
        assert!(matches!(
            shapley_values(&g, array![0.0, 0.0].view(), Array2::zeros((0, 2)).view()),
            Err(ExplainError::EmptyBackground)
        ));
    }

    #[test]
    fn single_relevant_feature_ranks_first() {
        let f = Func(3, |x: &[f64]| 5.0 * x[1]);
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let p = importance_profile(&f, random_matrix(20, 3, 1).view(), random_matrix(10, 3, 2).view(), &names, "v0").unwrap();
        assert_eq!(p.ranking, vec![1, 0, 2]);
        assert_eq!(p.top(), "b");
        assert_eq!(p.importance[0], 0.0);
        assert!(importance_profile(&f, Array2::zeros((0, 3)).view(), random_matrix(2, 3, 2).view(), &names, "v").is_err());
    }

    #[test]
    fn kendall_tau_cases() {
        let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let p0 = ImportanceProfile::from_importance("v0", names.clone(), vec![4.0, 3.0, 2.0, 1.0]);
        let p1 = ImportanceProfile::from_importance("v1", names.clone(), vec![3.0, 4.0, 2.0, 1.0]);
        let p2 = ImportanceProfile::from_importance("v2", names.clone(), vec![3.0, 4.0, 1.0, 2.0]);
        let evo = importance_evolution(&[p0.clone(), p1, p2]).unwrap();
        assert_eq!(evo.rows.len(), 12);
        for s in &evo.stability {
            assert!((s.kendall_tau - 2.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(kendall_tau(&p0.ranking, &p0.ranking), 1.0);
        assert_eq!(kendall_tau(&[0, 1, 2, 3], &[3, 2, 1, 0]), -1.0);
        assert!(importance_evolution(&[p0.clone()]).is_err());
        let other = ImportanceProfile::from_importance("x", vec!["z".into(); 4], vec![0.0; 4]);
        assert!(matches!(importance_evolution(&[p0, other]), Err(ExplainError::SchemaMismatch(_))));
    }

    #[test]
    fn ties_keep_feature_order() {
        let p = ImportanceProfile::from_importance("v", vec!["a".into(), "b".into(), "c".into()], vec![1.0, 2.0, 1.0]);
        assert_eq!(p.ranking, vec![1, 0, 2]);
        assert_eq!(p.ranks(), vec![2, 1, 3]);
    }

    #[test]
    fn subsampling_is_seeded() {
        assert_eq!(sample_rows(1000, 10, 3), sample_rows(1000, 10, 3));
        assert_ne!(sample_rows(1000, 10, 3), sample_rows(1000, 10, 4));
        assert_eq!(sample_rows(5, 10, 0), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn efficiency_holds(seed in 0u64..10_000, d in 1usize..7, nb in 1usize..12) {
            let net = random_net(d, seed);
            let bg = random_matrix(nb, d, seed ^ 0xabc);
            let x = random_matrix(1, d, seed ^ 0xdef);
            let a = shapley_values(&net, x.row(0), bg.view()).unwrap();
            let f = net.predict(x.view()).unwrap()[0];
            prop_assert!((a.values.iter().sum::<f64>() + a.base_value - f).abs() < 1e-6);
        }
    }
}
