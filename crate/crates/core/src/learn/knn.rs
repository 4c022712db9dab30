//! k-nearest-neighbor classifier on standardized features.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_xy_any, LearnError};
use crate::spatial::KdTree;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnKind {
    Knn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub kind: KnnKind,
    pub k: usize,
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Standardized training rows.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    #[serde(skip)]
    tree: Option<KdTree>,
}

impl PartialEq for KnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.feature_names == other.feature_names
            && self.means == other.means
            && self.scales == other.scales
            && self.rows == other.rows
            && self.labels == other.labels
    }
}

pub fn train_knn(x: &[Vec<f64>], y: &[u8], k: usize, feature_names: Option<&[String]>) -> Result<KnnModel, LearnError> {
    let d = check_xy_any(x, y)?;
    if k == 0 {
        return Err(LearnError::InvalidParameter("k must be at least 1"));
    }
    if k > x.len() {
        return Err(LearnError::KTooLarge { k, n: x.len() });
    }
    let mut means = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for c in 0..d {
        let col: Vec<f64> = x.iter().map(|r| r[c]).collect();
        means.push(stats::mean(&col));
        let s = stats::std_dev(&col);
        scales.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
    }
    let mut model = KnnModel {
        kind: KnnKind::Knn,
        k,
        feature_names: match feature_names {
            Some(n) => n.to_vec(),
            None => (0..d).map(|i| alloc::format!("f{i}")).collect(),
        },
        means,
        scales,
        rows: Vec::new(),
        labels: y.to_vec(),
        tree: None,
    };
    model.rows = x.iter().map(|r| model.standardize(r)).collect();
    model.tree = Some(KdTree::build(&model.rows));
    Ok(model)
}

impl KnnModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(c, v)| (v - self.means[c]) / self.scales[c])
            .collect()
    }

    /// Rebuilds the search tree after deserialization.
    pub fn rebuild_index(&mut self) {
        self.tree = Some(KdTree::build(&self.rows));
    }

    fn votes(&self, x: &[f64]) -> (usize, usize) {
        let q = self.standardize(x);
        let nb = match &self.tree {
            Some(t) => t.nearest(&q, self.k, None),
            None => KdTree::build(&self.rows).nearest(&q, self.k, None),
        };
        let ones = nb.iter().filter(|n| self.labels[n.index] == 1).count();
        (ones, nb.len())
    }

    /// Fraction of class-1 neighbors.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (ones, n) = self.votes(x);
        ones as f64 / n.max(1) as f64
    }

    /// Majority vote; a tie goes to class 0.
    pub fn predict(&self, x: &[f64]) -> u8 {
        let (ones, n) = self.votes(x);
        u8::from(2 * ones > n)
    }
}
