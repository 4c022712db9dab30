//! k-nearest-neighbor imputation.
//!
//! Missing cells are first filled with column means to get a complete
//! working copy, a k-d tree is built over the standardized working rows, and
//! each missing cell becomes a weighted average of its row's neighbors.

use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureMatrix};
use crate::spatial::{KdTree, Neighbor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    InverseDistance,
}

const DISTANCE_EPS: f64 = 1e-9;

/// Imputer fitted on a reference set of rows.
#[derive(Debug, Clone)]
pub struct KnnImputer {
    k: usize,
    weighting: Weighting,
    means: Vec<f64>,
    scales: Vec<f64>,
    reference: Vec<Vec<Option<f64>>>,
    tree: KdTree,
}

impl KnnImputer {
    /// Fits on `rows`. Errors if `k == 0` or a column has no observed value.
    pub fn fit(
        columns: &[alloc::string::String],
        rows: &[Vec<Option<f64>>],
        k: usize,
        weighting: Weighting,
    ) -> Result<Self, DatasetError> {
        if k == 0 {
            return Err(DatasetError::InvalidK);
        }
        let d = columns.len();
        let mut means = Vec::with_capacity(d);
        let mut scales = Vec::with_capacity(d);
        for (c, name) in columns.iter().enumerate() {
            let obs: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            if obs.is_empty() {
                return Err(DatasetError::EmptyColumn(name.to_string()));
            }
            let m = crate::stats::mean(&obs);
            let s = crate::stats::std_dev(&obs);
            means.push(m);
            scales.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        let mut imputer = Self {
            k,
            weighting,
            means,
            scales,
            reference: rows.to_vec(),
            tree: KdTree::build(&[]),
        };
        let z: Vec<Vec<f64>> = rows.iter().map(|r| imputer.standardize(r)).collect();
        imputer.tree = KdTree::build(&z);
        Ok(imputer)
    }

    /// Mean-imputes and standardizes a row.
    fn standardize(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, v)| (v.unwrap_or(self.means[c]) - self.means[c]) / self.scales[c])
            .collect()
    }

    fn fill(&self, row: &[Option<f64>], neighbors: &[Neighbor]) -> Vec<Option<f64>> {
        row.iter()
            .enumerate()
            .map(|(c, v)| {
                if v.is_some() {
                    return *v;
                }
                if neighbors.is_empty() {
                    return Some(self.means[c]);
                }
                let observed: Vec<(f64, f64)> = neighbors
                    .iter()
                    .filter_map(|n| self.reference[n.index][c].map(|x| (x, self.weight(n))))
                    .collect();
                let pairs: Vec<(f64, f64)> = if observed.is_empty() {
                    neighbors.iter().map(|n| (self.means[c], self.weight(n))).collect()
                } else {
                    observed
                };
                let wsum: f64 = pairs.iter().map(|p| p.1).sum();
                Some(pairs.iter().map(|(x, w)| x * w).sum::<f64>() / wsum)
            })
            .collect()
    }

    fn weight(&self, n: &Neighbor) -> f64 {
        match self.weighting {
            Weighting::Uniform => 1.0,
            Weighting::InverseDistance => 1.0 / (n.distance + DISTANCE_EPS),
        }
    }

    /// Imputes the reference rows themselves, never using a row as its own
    /// neighbor.
    pub fn transform_reference(&self) -> Vec<Vec<Option<f64>>> {
        self.reference
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.iter().all(Option::is_some) {
                    return r.clone();
                }
                let nb = self.tree.nearest(&self.standardize(r), self.k, Some(i));
                self.fill(r, &nb)
            })
            .collect()
    }

    /// Imputes new rows against the reference set.
    pub fn transform(&self, rows: &[Vec<Option<f64>>]) -> Vec<Vec<Option<f64>>> {
        rows.iter()
            .map(|r| {
                if r.iter().all(Option::is_some) {
                    return r.clone();
                }
                let nb = self.tree.nearest(&self.standardize(r), self.k, None);
                self.fill(r, &nb)
            })
            .collect()
    }
}

/// Imputes every missing cell of `matrix` from its own rows.
pub fn knn_impute(matrix: &FeatureMatrix, k: usize, weighting: Weighting) -> Result<FeatureMatrix, DatasetError> {
    let imputer = KnnImputer::fit(&matrix.columns, &matrix.values, k, weighting)?;
    Ok(FeatureMatrix {
        values: imputer.transform_reference(),
        ..matrix.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RowKey;
    use alloc::string::String;
    use alloc::vec;

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> FeatureMatrix {
        let d = rows[0].len();
        let mut m = FeatureMatrix::empty((0..d).map(|i| alloc::format!("c{i}")).collect());
        for (i, r) in rows.into_iter().enumerate() {
            m.push_row(
                RowKey {
                    user_id: String::from("u"),
                    window_start: i as i64,
                },
                r,
                None,
            )
            .unwrap();
        }
        m
    }

    #[test]
    fn complete_matrix_unchanged() {
        let m = matrix(vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(5.0)]]);
        assert_eq!(knn_impute(&m, 5, Weighting::InverseDistance).unwrap(), m);
    }

    #[test]
    fn small_example_matches_hand_oracle() {
        let m = matrix(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(1.0), Some(4.0)],
            vec![Some(9.0), None],
        ]);
        let out = knn_impute(&m, 2, Weighting::InverseDistance).unwrap();
        // column 0: mean 11/3, std sqrt(128/9); column 1: mean 3, std 1.
        // Row 2's working copy sits at (9, 3) so both neighbors are
        // equidistant: the weighted average is the plain mean (2 + 4) / 2.
        let v = out.values[2][1].unwrap();
        assert!((v - 3.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn uniform_average_of_observed_neighbors() {
        let m = matrix(vec![
            vec![Some(0.0), Some(10.0)],
            vec![Some(0.1), Some(20.0)],
            vec![Some(5.0), Some(99.0)],
            vec![Some(0.05), None],
        ]);
        let out = knn_impute(&m, 2, Weighting::Uniform).unwrap();
        assert_eq!(out.values[3][1], Some(15.0));
    }

    #[test]
    fn empty_column_rejected() {
        let m = matrix(vec![vec![Some(1.0), None], vec![Some(2.0), None]]);
        assert_eq!(
            knn_impute(&m, 2, Weighting::Uniform),
            Err(DatasetError::EmptyColumn("c1".into()))
        );
    }

    #[test]
    fn zero_k_rejected() {
        let m = matrix(vec![vec![Some(1.0)]]);
        assert_eq!(knn_impute(&m, 0, Weighting::Uniform), Err(DatasetError::InvalidK));
    }
}
