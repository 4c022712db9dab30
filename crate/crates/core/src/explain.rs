//! Exact interventional Shapley values for tree ensembles.
//!
//! `v(S)` is the mean model output over background rows with the features
//! in `S` taken from the explained row. Each (tree, background row) pair
//! reduces to a handful of leaves, each reachable exactly when a set `A` of
//! features is in `S` and a set `C` is not, so `v` over all coalitions is
//! built from those leaf records before the Shapley sum is taken.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::tree::TreeNode;
use crate::learn::{par_map, sigmoid, EnsembleKind, TreeEnsembleModel};

pub const MAX_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExplainError {
    #[error("{0} features exceed the exact-enumeration limit of 16")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("row has {got} values, model expects {expected}")]
    Shape { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub base_value: f64,
    pub shap_values: Vec<f64>,
    pub feature_values: Vec<f64>,
    /// Model output for the row; equals base plus the attributions.
    pub output: f64,
}

fn check(model: &TreeEnsembleModel, rows: &[Vec<f64>], background: &[Vec<f64>]) -> Result<usize, ExplainError> {
    let d = model.n_features();
    if d > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(d));
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    for r in rows.iter().chain(background) {
        if r.len() != d {
            return Err(ExplainError::Shape {
                expected: d,
                got: r.len(),
            });
        }
    }
    Ok(d)
}

/// Leaves reachable by mixing `x` and `b`, as `(must-in, must-out, value)`.
fn hybrid_leaves(node: &TreeNode, x: &[f64], b: &[f64], a: u32, c: u32, scale: f64, out: &mut Vec<(u32, u32, f64)>) {
    match node {
        TreeNode::Leaf { value, .. } => out.push((a, c, scale * value)),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let xl = x[*feature] <= *threshold;
            let bl = b[*feature] <= *threshold;
            let side = |go_left: bool| if go_left { left } else { right };
            if xl == bl {
                return hybrid_leaves(side(xl), x, b, a, c, scale, out);
            }
            let bit = 1u32 << feature;
            if c & bit == 0 {
                hybrid_leaves(side(xl), x, b, a | bit, c, scale, out);
            }
            if a & bit == 0 {
                hybrid_leaves(side(bl), x, b, a, c | bit, scale, out);
            }
        }
    }
}

/// Adds `w` to `v[S]` for every `S` with `a ⊆ S` and `S ∩ c = ∅`.
fn spread(v: &mut [f64], full: u32, a: u32, c: u32, w: f64) {
    let free = full & !(a | c);
    let mut sub = free;
    loop {
        v[(a | sub) as usize] += w;
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & free;
    }
}

/// `v(S)` for every coalition mask `S` over the model's features.
pub fn coalition_values(
    model: &TreeEnsembleModel,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>, ExplainError> {
    let d = check(model, core::slice::from_ref(&x.to_vec()), background)?;
    let full = ((1u64 << d) - 1) as u32;
    let nb = background.len() as f64;
    let mut v = vec![0.0; 1 << d];
    let mut leaves = Vec::new();
    match model.kind {
        EnsembleKind::RandomForest => {
            for b in background {
                for (t, w) in model.trees.iter().zip(&model.tree_weights) {
                    hybrid_leaves(t, x, b, 0, 0, w / nb, &mut leaves);
                }
            }
            leaves.sort_by_key(|p| (p.0, p.1));
            let mut i = 0;
            while i < leaves.len() {
                let (a, c) = (leaves[i].0, leaves[i].1);
                let mut w = 0.0;
                while i < leaves.len() && (leaves[i].0, leaves[i].1) == (a, c) {
                    w += leaves[i].2;
                    i += 1;
                }
                spread(&mut v, full, a, c, w);
            }
            for s in &mut v {
                *s += model.base_score;
            }
        }
        EnsembleKind::Boosted => {
            let mut score = vec![0.0; 1 << d];
            for b in background {
                leaves.clear();
                for (t, w) in model.trees.iter().zip(&model.tree_weights) {
                    hybrid_leaves(t, x, b, 0, 0, *w, &mut leaves);
                }
                score.fill(model.base_score);
                for &(a, c, w) in &leaves {
                    spread(&mut score, full, a, c, w);
                }
                for (acc, s) in v.iter_mut().zip(&score) {
                    *acc += sigmoid(*s) / nb;
                }
            }
        }
    }
    Ok(v)
}

/// Shapley values from a full table of coalition values.
pub fn shapley_from_values(v: &[f64], d: usize) -> Vec<f64> {
    // weight(|S|) = |S|! (d - |S| - 1)! / d! = 1 / (d * C(d-1, |S|))
    let mut weight = vec![0.0; d.max(1)];
    let mut binom = 1.0;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (d as f64 * binom);
        binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
    }
    let mut phi = vec![0.0; d];
    for s in 0..v.len() {
        let size = (s as u32).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if s & (1 << i) == 0 {
                *p += weight[size] * (v[s | (1 << i)] - v[s]);
            }
        }
    }
    phi
}

pub fn shap_values(model: &TreeEnsembleModel, row: &[f64], background: &[Vec<f64>]) -> Result<Explanation, ExplainError> {
    let v = coalition_values(model, row, background)?;
    let d = model.n_features();
    Ok(Explanation {
        base_value: v[0],
        shap_values: shapley_from_values(&v, d),
        feature_values: row.to_vec(),
        output: model.predict_proba(row),
    })
}

/// Explains every row; rows are independent.
pub fn explain_rows(
    model: &TreeEnsembleModel,
    rows: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<Vec<Explanation>, ExplainError> {
    check(model, rows, background)?;
    par_map(rows.len(), |i| shap_values(model, &rows[i], background))
        .into_iter()
        .collect()
}

/// `(feature index, mean |shap|)` in descending order, ties by index.
pub fn rank_mean_abs(explanations: &[Explanation], d: usize) -> Vec<(usize, f64)> {
    let mut total = vec![0.0; d];
    for e in explanations {
        for (t, s) in total.iter_mut().zip(&e.shap_values) {
            *t += libm::fabs(*s);
        }
    }
    let n = explanations.len().max(1) as f64;
    let mut out: Vec<(usize, f64)> = total.into_iter().map(|t| t / n).enumerate().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

pub fn mean_abs_shap(
    model: &TreeEnsembleModel,
    rows: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<Vec<(usize, f64)>, ExplainError> {
    let ex = explain_rows(model, rows, background)?;
    Ok(rank_mean_abs(&ex, model.n_features()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRecord {
    pub row: usize,
    pub feature: String,
    pub shap: f64,
    pub feature_value: f64,
}

/// Long-format table: features by descending total |shap|, rows in order
/// within each feature.
pub fn beeswarm_records(explanations: &[Explanation], feature_names: &[String]) -> Vec<BeeswarmRecord> {
    let order = rank_mean_abs(explanations, feature_names.len());
    let mut out = Vec::with_capacity(explanations.len() * feature_names.len());
    for (f, _) in order {
        for (row, e) in explanations.iter().enumerate() {
            out.push(BeeswarmRecord {
                row,
                feature: feature_names[f].clone(),
                shap: e.shap_values[f],
                feature_value: e.feature_values[f],
            });
        }
    }
    out
}

pub fn beeswarm_export(
    model: &TreeEnsembleModel,
    rows: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<Vec<BeeswarmRecord>, ExplainError> {
    let ex = explain_rows(model, rows, background)?;
    Ok(beeswarm_records(&ex, &model.feature_names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{train_boosted, train_random_forest};
    use alloc::boxed::Box;

    fn leaf(v: f64) -> Box<TreeNode> {
        Box::new(TreeNode::Leaf {
            class_counts: [0.0, 0.0],
            value: v,
        })
    }

    fn stump_model(feature: usize, d: usize) -> TreeEnsembleModel {
        let mut m = TreeEnsembleModel::constant(EnsembleKind::RandomForest, (0..d).map(|i| alloc::format!("f{i}")).collect(), 0, 0);
        m.trees = vec![TreeNode::Split {
            feature,
            threshold: 0.5,
            impurity_decrease: 1.0,
            sample_fraction: 1.0,
            left: leaf(0.2),
            right: leaf(0.9),
        }];
        m
    }

    #[test]
    fn stump_hand_enumeration() {
        // v(∅) = mean over background of f(b); v({0}) = f(x) = 0.9.
        let m = stump_model(0, 2);
        let bg = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let e = shap_values(&m, &[1.0, 0.0], &bg).unwrap();
        let base = (0.2 * 3.0 + 0.9) / 4.0;
        assert!((e.base_value - base).abs() < 1e-15);
        assert!((e.shap_values[0] - (0.9 - base)).abs() < 1e-15);
        assert_eq!(e.shap_values[1], 0.0);
    }

    #[test]
    fn local_accuracy_forest_and_boosted() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i % 5) as f64, (i % 3) as f64]).collect();
        let y: Vec<u8> = x.iter().map(|r| u8::from(r[0] + r[1] > 5.0)).collect();
        let rf = train_random_forest(&x, &y, 4, 10, 2, None).unwrap();
        let gb = train_boosted(&x, &y, 10, 3, 0.3, 2, None).unwrap();
        for m in [&rf, &gb] {
            for r in x.iter().take(10) {
                let e = shap_values(m, r, &x[..20]).unwrap();
                let sum = e.base_value + e.shap_values.iter().sum::<f64>();
                assert!((sum - e.output).abs() < 1e-9, "{sum} {}", e.output);
            }
        }
    }

    #[test]
    fn errors() {
        let m = stump_model(0, 17);
        assert_eq!(
            shap_values(&m, &[0.0; 17], &[vec![0.0; 17]]),
            Err(ExplainError::TooManyFeatures(17))
        );
        let m = stump_model(0, 2);
        assert_eq!(shap_values(&m, &[0.0; 2], &[]), Err(ExplainError::EmptyBackground));
    }

    #[test]
    fn beeswarm_shape() {
        let m = stump_model(1, 3);
        let rows = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]];
        let recs = beeswarm_export(&m, &rows, &rows).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs[0].feature, "f1");
        assert!(beeswarm_export(&m, &[], &rows).unwrap().is_empty());
    }
}
