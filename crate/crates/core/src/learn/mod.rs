//! Classifiers, feature selection and the evaluation harness.

mod cv;
mod ensemble;
mod importance;
mod knn;
mod metrics;
pub mod tree;

pub use cv::{
    assign_folds, evaluate_split, fit_pipeline, grouped_cv, personalization_eval, prepare_split, EvalReport,
    FittedPipeline, FoldReport, PersonalizationReport, SplitOutcome,
};
pub use ensemble::{
    sigmoid, train_boosted, train_random_forest, EnsembleKind, Hyperparameters, TreeEnsembleModel, BOOST_DEPTH,
    BOOST_LEARNING_RATE, BOOST_ROUNDS,
};
pub use importance::{
    gini_importance, importance_ranking, importances, rank, select_top_features, SELECTOR_DEPTH, SELECTOR_TREES,
};
pub use knn::{train_knn, KnnKind, KnnModel};
pub use metrics::{f1_score, Confusion};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Weighting};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("training data is empty")]
    EmptyData,
    #[error("rows and labels differ in length or rows are ragged")]
    LengthMismatch,
    #[error("features contain missing or non-finite values")]
    NonFinite,
    #[error("labels must be 0 or 1")]
    NonBinaryLabels,
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("k = {k} exceeds the {n} training rows")]
    KTooLarge { k: usize, n: usize },
    #[error("cannot select zero features")]
    EmptySelection,
    #[error("cannot select {m} of {d} features")]
    SelectionTooLarge { m: usize, d: usize },
    #[error("{groups} users cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("target user needs at least 2 labeled windows, has {0}")]
    InsufficientTargetData(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Validates `(x, y)` and returns the feature count.
pub(crate) fn check_xy_any(x: &[Vec<f64>], y: &[u8]) -> Result<usize, LearnError> {
    if x.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let d = x[0].len();
    if x.len() != y.len() || x.iter().any(|r| r.len() != d) {
        return Err(LearnError::LengthMismatch);
    }
    if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(LearnError::NonFinite);
    }
    if y.iter().any(|&v| v > 1) {
        return Err(LearnError::NonBinaryLabels);
    }
    Ok(d)
}

/// As [`check_xy_any`], also requiring both classes.
pub(crate) fn check_xy(x: &[Vec<f64>], y: &[u8]) -> Result<usize, LearnError> {
    let d = check_xy_any(x, y)?;
    if y.iter().all(|&v| v == y[0]) {
        return Err(LearnError::DegenerateLabels);
    }
    Ok(d)
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Derives an independent seed for a sub-task.
pub fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    Knn,
    Boosted,
}

/// Everything needed to refit a model from scratch on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub depth: usize,
    pub n_trees: usize,
    pub k: usize,
    pub learning_rate: f64,
    /// Fixed selection size; `None` tunes it on the training users.
    pub select_top: Option<usize>,
    pub impute_k: usize,
    pub impute_weighting: Weighting,
}

impl ModelSpec {
    pub fn random_forest(depth: usize) -> Self {
        Self {
            kind: ModelKind::RandomForest,
            depth,
            n_trees: 100,
            k: 5,
            learning_rate: 1.0,
            select_top: None,
            impute_k: 5,
            impute_weighting: Weighting::InverseDistance,
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            kind: ModelKind::Knn,
            k,
            ..Self::random_forest(0)
        }
    }

    pub fn boosted(depth: usize) -> Self {
        Self {
            kind: ModelKind::Boosted,
            depth,
            n_trees: BOOST_ROUNDS,
            learning_rate: BOOST_LEARNING_RATE,
            ..Self::random_forest(depth)
        }
    }

    pub fn with_select_top(mut self, m: Option<usize>) -> Self {
        self.select_top = m;
        self
    }
}

/// A fitted classifier of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Model {
    Ensemble(TreeEnsembleModel),
    Knn(KnnModel),
}

impl Model {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            Model::Ensemble(m) => m.predict_proba(x),
            Model::Knn(m) => m.predict_proba(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        match self {
            Model::Ensemble(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Model::Ensemble(m) => &m.feature_names,
            Model::Knn(m) => &m.feature_names,
        }
    }

    pub fn as_ensemble(&self) -> Option<&TreeEnsembleModel> {
        match self {
            Model::Ensemble(m) => Some(m),
            Model::Knn(_) => None,
        }
    }
}

/// Fits `spec` on `(x, y)`. Single-class labels yield a constant ensemble
/// and `true` in the second slot.
pub fn fit_model(
    spec: &ModelSpec,
    x: &[Vec<f64>],
    y: &[u8],
    seed: u64,
    names: &[String],
) -> Result<(Model, bool), LearnError> {
    let result = match spec.kind {
        ModelKind::RandomForest => train_random_forest(x, y, spec.depth, spec.n_trees, seed, Some(names)).map(Model::Ensemble),
        ModelKind::Boosted => {
            train_boosted(x, y, spec.n_trees, spec.depth, spec.learning_rate, seed, Some(names)).map(Model::Ensemble)
        }
        ModelKind::Knn => return train_knn(x, y, spec.k, Some(names)).map(|m| (Model::Knn(m), false)),
    };
    match result {
        Ok(m) => Ok((m, false)),
        Err(LearnError::DegenerateLabels) => {
            let kind = match spec.kind {
                ModelKind::Boosted => EnsembleKind::Boosted,
                _ => EnsembleKind::RandomForest,
            };
            Ok((Model::Ensemble(TreeEnsembleModel::constant(kind, names.to_vec(), y[0], seed)), true))
        }
        Err(e) => Err(e),
    }
}
