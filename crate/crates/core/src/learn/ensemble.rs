//! Random forests and gradient-boosted trees.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classifier, grow_regressor, presort, ClassTreeParams, RegTreeParams, TreeNode};
use super::{check_xy, par_map, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub depth: usize,
    pub n_trees: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

/// Output is `base_score + sum(tree_weights[t] * leaf_t(x))`; forests emit
/// that as the class-1 probability, boosted models pass it through the
/// logistic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: EnsembleKind,
    pub hyperparameters: Hyperparameters,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub tree_weights: Vec<f64>,
    pub trees: Vec<TreeNode>,
    pub seed: u64,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

/// RNG for tree `index`: one ChaCha stream per tree under the model seed.
pub(crate) fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl TreeEnsembleModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Raw additive score.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .zip(&self.tree_weights)
                .map(|(t, w)| w * t.leaf_value(x))
                .sum::<f64>()
    }

    /// Class-1 probability.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.link(self.score(x))
    }

    pub fn link(&self, score: f64) -> f64 {
        match self.kind {
            EnsembleKind::RandomForest => score,
            EnsembleKind::Boosted => sigmoid(score),
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.predict_proba(x) > 0.5)
    }

    /// A model that always outputs `class`, used when training labels hold
    /// a single class.
    pub fn constant(kind: EnsembleKind, feature_names: Vec<String>, class: u8, seed: u64) -> Self {
        let p = f64::from(class);
        let (base, value) = match kind {
            EnsembleKind::RandomForest => (0.0, p),
            // a score of +/-20 maps to within 3e-9 of the class
            EnsembleKind::Boosted => (if class == 1 { 20.0 } else { -20.0 }, 0.0),
        };
        let mut counts = [0.0; 2];
        counts[usize::from(class)] = 1.0;
        Self {
            kind,
            hyperparameters: Hyperparameters {
                depth: 0,
                n_trees: 1,
                learning_rate: 1.0,
                lambda: 0.0,
            },
            feature_names,
            base_score: base,
            tree_weights: vec![1.0],
            trees: vec![TreeNode::Leaf {
                class_counts: counts,
                value,
            }],
            seed,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.trees.len() == self.tree_weights.len() && self.trees.iter().all(|t| t.is_valid(self.n_features()))
    }
}

fn feature_names_or_default(names: Option<&[String]>, d: usize) -> Vec<String> {
    match names {
        Some(n) => n.to_vec(),
        None => (0..d).map(|i| alloc::format!("f{i}")).collect(),
    }
}

/// Bootstrap-aggregated Gini trees with `ceil(sqrt(d))` candidate features
/// per node.
pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[u8],
    depth: usize,
    n_trees: usize,
    seed: u64,
    feature_names: Option<&[String]>,
) -> Result<TreeEnsembleModel, LearnError> {
    let d = check_xy(x, y)?;
    if n_trees == 0 {
        return Err(LearnError::InvalidParameter("n_trees must be at least 1"));
    }
    if depth == 0 {
        return Err(LearnError::InvalidParameter("depth must be at least 1"));
    }
    let params = ClassTreeParams {
        max_depth: depth,
        max_features: libm::ceil(libm::sqrt(d as f64)) as usize,
    };
    let n = x.len();
    let trees = par_map(n_trees, |t| {
        let mut rng = tree_rng(seed, t);
        let mut mult = vec![0u32; n];
        for _ in 0..n {
            mult[rng.random_range(0..n)] += 1;
        }
        let samples: Vec<(usize, f64)> = mult
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0)
            .map(|(i, &m)| (i, f64::from(m)))
            .collect();
        grow_classifier(x, y, samples, &params, &mut rng)
    });
    Ok(TreeEnsembleModel {
        kind: EnsembleKind::RandomForest,
        hyperparameters: Hyperparameters {
            depth,
            n_trees,
            learning_rate: 1.0,
            lambda: 0.0,
        },
        feature_names: feature_names_or_default(feature_names, d),
        base_score: 0.0,
        tree_weights: vec![1.0 / n_trees as f64; n_trees],
        trees,
        seed,
    })
}

pub const BOOST_ROUNDS: usize = 100;
pub const BOOST_DEPTH: usize = 6;
pub const BOOST_LEARNING_RATE: f64 = 0.3;
pub const BOOST_LAMBDA: f64 = 1.0;
pub const BOOST_MIN_CHILD_WEIGHT: f64 = 1.0;

/// Logistic-loss gradient boosting. The seed only labels the model; the
/// fit itself is deterministic.
pub fn train_boosted(
    x: &[Vec<f64>],
    y: &[u8],
    rounds: usize,
    depth: usize,
    learning_rate: f64,
    seed: u64,
    feature_names: Option<&[String]>,
) -> Result<TreeEnsembleModel, LearnError> {
    let d = check_xy(x, y)?;
    if rounds == 0 {
        return Err(LearnError::InvalidParameter("rounds must be at least 1"));
    }
    if depth == 0 {
        return Err(LearnError::InvalidParameter("depth must be at least 1"));
    }
    if !(learning_rate > 0.0 && learning_rate <= 1.0) {
        return Err(LearnError::InvalidParameter("learning rate must be in (0, 1]"));
    }
    let n = x.len();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let mean = pos / n as f64;
    let base = libm::log(mean / (1.0 - mean));
    let params = RegTreeParams {
        max_depth: depth,
        lambda: BOOST_LAMBDA,
        min_child_weight: BOOST_MIN_CHILD_WEIGHT,
    };
    let sorted = presort(x);
    let mut scores = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = p * (1.0 - p);
        }
        let tree = grow_regressor(x, y, &grad, &hess, &sorted, &params);
        for (s, xi) in scores.iter_mut().zip(x) {
            *s += learning_rate * tree.leaf_value(xi);
        }
        trees.push(tree);
    }
    Ok(TreeEnsembleModel {
        kind: EnsembleKind::Boosted,
        hyperparameters: Hyperparameters {
            depth,
            n_trees: rounds,
            learning_rate,
            lambda: BOOST_LAMBDA,
        },
        feature_names: feature_names_or_default(feature_names, d),
        base_score: base,
        tree_weights: vec![learning_rate; rounds],
        trees,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::f1_score;

    fn separable(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let x = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        let y = (0..n).map(|i| u8::from(i >= n / 2)).collect();
        (x, y)
    }

    #[test]
    fn forest_fits_separable_data() {
        let (x, y) = separable(40);
        let m = train_random_forest(&x, &y, 3, 25, 9, None).unwrap();
        let pred: Vec<u8> = x.iter().map(|r| m.predict(r)).collect();
        assert_eq!(f1_score(&y, &pred).unwrap(), 1.0);
        assert!(m.is_valid());
    }

    #[test]
    fn forest_is_deterministic() {
        let (x, y) = separable(30);
        let a = train_random_forest(&x, &y, 4, 10, 3, None).unwrap();
        let b = train_random_forest(&x, &y, 4, 10, 3, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let (x, _) = separable(10);
        assert_eq!(
            train_random_forest(&x, &[1; 10], 3, 5, 0, None),
            Err(LearnError::DegenerateLabels)
        );
        assert_eq!(
            train_boosted(&x, &[0; 10], 5, 2, 0.3, 0, None),
            Err(LearnError::DegenerateLabels)
        );
    }

    #[test]
    fn one_boosting_stump_orders_scores() {
        let (x, y) = separable(40);
        let m = train_boosted(&x, &y, 1, 1, 0.3, 0, None).unwrap();
        let s: Vec<f64> = x.iter().map(|r| m.score(r)).collect();
        let max0 = s[..20].iter().cloned().fold(f64::MIN, f64::max);
        let min1 = s[20..].iter().cloned().fold(f64::MAX, f64::min);
        assert!(max0 < min1);
    }

    #[test]
    fn boosted_xor() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        // random points: a perfectly balanced grid gives every root split
        // zero gain
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..400 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            x.push(vec![a, b]);
            y.push(u8::from((a > 0.5) != (b > 0.5)));
        }
        let m = train_boosted(&x, &y, 50, 3, 0.3, 0, None).unwrap();
        let pred: Vec<u8> = x.iter().map(|r| m.predict(r)).collect();
        assert!(f1_score(&y, &pred).unwrap() >= 0.95);
    }

    #[test]
    fn constant_model_outputs_class() {
        for kind in [EnsembleKind::RandomForest, EnsembleKind::Boosted] {
            let m = TreeEnsembleModel::constant(kind, vec!["a".into()], 1, 0);
            assert_eq!(m.predict(&[3.0]), 1);
            let m = TreeEnsembleModel::constant(kind, vec!["a".into()], 0, 0);
            assert_eq!(m.predict(&[3.0]), 0);
        }
    }
}
