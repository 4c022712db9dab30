//! Mean decrease impurity and feature selection.

use alloc::vec;
use alloc::vec::Vec;

use super::ensemble::{train_random_forest, TreeEnsembleModel};
use super::LearnError;

pub const SELECTOR_DEPTH: usize = 10;
pub const SELECTOR_TREES: usize = 100;

/// Per-feature importances, indexed by feature. Split decreases are summed
/// per tree, averaged over trees and normalized to sum to one. All zeros if
/// no tree splits.
pub fn importances(model: &TreeEnsembleModel) -> Vec<f64> {
    let d = model.n_features();
    let mut total = vec![0.0; d];
    for tree in &model.trees {
        tree.visit_splits(&mut |f, dec| total[f] += dec);
    }
    let t = model.trees.len().max(1) as f64;
    for v in &mut total {
        *v /= t;
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        for v in &mut total {
            *v /= s;
        }
    }
    total
}

/// Feature indices by descending importance; ties go to the lower index.
pub fn rank(importances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importances.len()).collect();
    idx.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    idx
}

/// Ranked `(feature index, importance)` pairs.
pub fn gini_importance(model: &TreeEnsembleModel) -> Vec<(usize, f64)> {
    let imp = importances(model);
    rank(&imp).into_iter().map(|i| (i, imp[i])).collect()
}

/// Full importance ranking from a selector forest fitted on `(x, y)`.
/// Single-class labels give no splits, so the ranking is by index.
pub fn importance_ranking(x: &[Vec<f64>], y: &[u8], seed: u64) -> Result<Vec<usize>, LearnError> {
    match train_random_forest(x, y, SELECTOR_DEPTH, SELECTOR_TREES, seed, None) {
        Ok(m) => Ok(rank(&importances(&m))),
        Err(LearnError::DegenerateLabels) => Ok((0..x.first().map_or(0, Vec::len)).collect()),
        Err(e) => Err(e),
    }
}

/// Indices of the `m` most important features, most important first.
pub fn select_top_features(x: &[Vec<f64>], y: &[u8], m: usize, seed: u64) -> Result<Vec<usize>, LearnError> {
    let d = x.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(LearnError::EmptySelection);
    }
    if m > d {
        return Err(LearnError::SelectionTooLarge { m, d });
    }
    let mut r = importance_ranking(x, y, seed)?;
    r.truncate(m);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::tree::TreeNode;
    use crate::learn::{EnsembleKind, Hyperparameters};
    use alloc::boxed::Box;
    use alloc::string::String;

    fn leaf(v: f64) -> Box<TreeNode> {
        Box::new(TreeNode::Leaf {
            class_counts: [1.0, 1.0],
            value: v,
        })
    }

    #[test]
    fn single_stump_gets_all_importance() {
        let model = TreeEnsembleModel {
            kind: EnsembleKind::RandomForest,
            hyperparameters: Hyperparameters {
                depth: 1,
                n_trees: 1,
                learning_rate: 1.0,
                lambda: 0.0,
            },
            feature_names: (0..5).map(|i| alloc::format!("f{i}")).collect::<Vec<String>>(),
            base_score: 0.0,
            tree_weights: vec![1.0],
            trees: vec![TreeNode::Split {
                feature: 3,
                threshold: 0.5,
                impurity_decrease: 0.2,
                sample_fraction: 1.0,
                left: leaf(0.0),
                right: leaf(1.0),
            }],
            seed: 0,
        };
        let r = gini_importance(&model);
        assert_eq!(r[0], (3, 1.0));
        assert!(r[1..].iter().all(|&(_, v)| v == 0.0));
        assert_eq!(r[1].0, 0);
    }

    #[test]
    fn selection_bounds() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(select_top_features(&x, &[0, 1], 0, 1), Err(LearnError::EmptySelection));
        assert_eq!(select_top_features(&x, &[0, 1], 2, 1).unwrap().len(), 2);
        assert!(select_top_features(&x, &[0, 1], 3, 1).is_err());
    }
}
