//! Binary decision trees: Gini classification trees for forests and
//! second-order regression trees for boosting.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A tree node. Leaves hold the weighted class counts that reached them and
/// the value they emit: a class-1 probability in forests, a raw score in
/// boosted ensembles. Splits send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        class_counts: [f64; 2],
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Weighted impurity decrease (Gini for forests, loss gain for
        /// boosting) scaled by the node's share of the training weight.
        impurity_decrease: f64,
        sample_fraction: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Calls `f(feature, impurity_decrease)` for every split.
    pub fn visit_splits(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split {
            feature,
            impurity_decrease,
            left,
            right,
            ..
        } = self
        {
            f(*feature, *impurity_decrease);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    /// Largest feature index referenced, if any split exists.
    pub fn max_feature(&self) -> Option<usize> {
        let mut m = None;
        self.visit_splits(&mut |f, _| m = Some(m.map_or(f, |x: usize| x.max(f))));
        m
    }

    pub fn is_valid(&self, n_features: usize) -> bool {
        match self {
            TreeNode::Leaf { class_counts, value } => {
                class_counts.iter().all(|c| *c >= 0.0 && c.is_finite()) && value.is_finite()
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                *feature < n_features && threshold.is_finite() && left.is_valid(n_features) && right.is_valid(n_features)
            }
        }
    }
}

/// Midpoint threshold between two consecutive distinct values; falls back
/// to the lower value if rounding lands on the upper one.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

fn gini(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n <= 0.0 {
        return 0.0;
    }
    let p = c[1] / n;
    2.0 * p * (1.0 - p)
}

pub(crate) struct ClassTreeParams {
    pub max_depth: usize,
    pub max_features: usize,
}

/// Grows a Gini tree over weighted samples `(row, weight)`.
pub(crate) fn grow_classifier<R: Rng>(
    x: &[Vec<f64>],
    y: &[u8],
    samples: Vec<(usize, f64)>,
    params: &ClassTreeParams,
    rng: &mut R,
) -> TreeNode {
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let d = x.first().map_or(0, Vec::len);
    let mut features: Vec<usize> = (0..d).collect();
    let mut buf = Vec::new();
    grow_class_node(x, y, samples, 0, total, params, &mut features, &mut buf, rng)
}

fn counts_of(y: &[u8], samples: &[(usize, f64)]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for &(r, w) in samples {
        c[usize::from(y[r])] += w;
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn grow_class_node<R: Rng>(
    x: &[Vec<f64>],
    y: &[u8],
    samples: Vec<(usize, f64)>,
    depth: usize,
    total: f64,
    params: &ClassTreeParams,
    features: &mut [usize],
    buf: &mut Vec<(f64, f64, u8)>,
    rng: &mut R,
) -> TreeNode {
    let counts = counts_of(y, &samples);
    let n = counts[0] + counts[1];
    let leaf = TreeNode::Leaf {
        class_counts: counts,
        value: if n > 0.0 { counts[1] / n } else { 0.0 },
    };
    if depth >= params.max_depth || samples.len() < 2 || counts[0] == 0.0 || counts[1] == 0.0 {
        return leaf;
    }
    let parent = n * gini(counts);

    // Draw features in random order until `max_features` non-constant ones
    // have been examined.
    features.shuffle(rng);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut visited = 0;
    for &f in features.iter() {
        if visited >= params.max_features {
            break;
        }
        buf.clear();
        buf.extend(samples.iter().map(|&(r, w)| (x[r][f], w, y[r])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        if buf[0].0 == buf[buf.len() - 1].0 {
            continue;
        }
        visited += 1;
        let mut left = [0.0; 2];
        for i in 0..buf.len() - 1 {
            left[usize::from(buf[i].2)] += buf[i].1;
            if buf[i].0 == buf[i + 1].0 {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1]];
            let nl = left[0] + left[1];
            let nr = right[0] + right[1];
            let score = nl * gini(left) + nr * gini(right);
            if best.is_none_or(|b| score < b.2) {
                best = Some((f, midpoint(buf[i].0, buf[i + 1].0), score));
            }
        }
    }
    let Some((feature, threshold, score)) = best else {
        return leaf;
    };
    let decrease = parent - score;
    if decrease <= 1e-12 * n {
        return leaf;
    }
    let (ls, rs): (Vec<_>, Vec<_>) = samples.into_iter().partition(|&(r, _)| x[r][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        impurity_decrease: decrease / total,
        sample_fraction: n / total,
        left: Box::new(grow_class_node(x, y, ls, depth + 1, total, params, features, buf, rng)),
        right: Box::new(grow_class_node(x, y, rs, depth + 1, total, params, features, buf, rng)),
    }
}

pub(crate) struct RegTreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

/// Rows of each feature in ascending value order, computed once per fit.
pub(crate) fn presort(x: &[Vec<f64>]) -> Vec<Vec<u32>> {
    let d = x.first().map_or(0, Vec::len);
    (0..d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..x.len() as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Grows a regression tree on gradients and hessians with exact greedy
/// splits. Leaf values are the Newton step `-G / (H + lambda)`.
pub(crate) fn grow_regressor(
    x: &[Vec<f64>],
    y: &[u8],
    grad: &[f64],
    hess: &[f64],
    sorted: &[Vec<u32>],
    params: &RegTreeParams,
) -> TreeNode {
    let mut side = vec![false; x.len()];
    let h_total: f64 = hess.iter().sum();
    grow_reg_node(x, y, grad, hess, sorted.to_vec(), 0, h_total, params, &mut side)
}

#[allow(clippy::too_many_arguments)]
fn grow_reg_node(
    x: &[Vec<f64>],
    y: &[u8],
    grad: &[f64],
    hess: &[f64],
    sorted: Vec<Vec<u32>>,
    depth: usize,
    h_total: f64,
    params: &RegTreeParams,
    side: &mut [bool],
) -> TreeNode {
    let rows: &[u32] = sorted.first().map_or(&[], Vec::as_slice);
    let (mut g, mut h) = (0.0, 0.0);
    let mut counts = [0.0; 2];
    for &r in rows {
        g += grad[r as usize];
        h += hess[r as usize];
        counts[usize::from(y[r as usize])] += 1.0;
    }
    let leaf = TreeNode::Leaf {
        class_counts: counts,
        value: -g / (h + params.lambda),
    };
    if depth >= params.max_depth || rows.len() < 2 {
        return leaf;
    }
    let parent = g * g / (h + params.lambda);
    let mut best: Option<(usize, f64, f64)> = None;
    for (f, list) in sorted.iter().enumerate() {
        let (mut gl, mut hl) = (0.0, 0.0);
        for i in 0..list.len() - 1 {
            let r = list[i] as usize;
            gl += grad[r];
            hl += hess[r];
            let (v, next) = (x[r][f], x[list[i + 1] as usize][f]);
            if v == next {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + params.lambda) + gr * gr / (hr + params.lambda) - parent);
            if best.is_none_or(|b| gain > b.2) {
                best = Some((f, midpoint(v, next), gain));
            }
        }
    }
    let Some((feature, threshold, gain)) = best else {
        return leaf;
    };
    if gain <= 1e-12 {
        return leaf;
    }
    for &r in rows {
        side[r as usize] = x[r as usize][feature] <= threshold;
    }
    let mut ls = Vec::with_capacity(sorted.len());
    let mut rs = Vec::with_capacity(sorted.len());
    for list in sorted {
        let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| side[i as usize]);
        ls.push(l);
        rs.push(r);
    }
    TreeNode::Split {
        feature,
        threshold,
        impurity_decrease: gain,
        sample_fraction: if h_total > 0.0 { h / h_total } else { 0.0 },
        left: Box::new(grow_reg_node(x, y, grad, hess, ls, depth + 1, h_total, params, side)),
        right: Box::new(grow_reg_node(x, y, grad, hess, rs, depth + 1, h_total, params, side)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gini_stump_on_separable_feature() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(i >= 5)).collect();
        let samples = (0..10).map(|i| (i, 1.0)).collect();
        let params = ClassTreeParams {
            max_depth: 3,
            max_features: 2,
        };
        let t = grow_classifier(&x, &y, samples, &params, &mut ChaCha8Rng::seed_from_u64(1));
        match &t {
            TreeNode::Split {
                feature,
                threshold,
                impurity_decrease,
                ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 4.5);
                assert!((impurity_decrease - 0.5).abs() < 1e-12);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(t.depth(), 1);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(t.leaf_value(xi), f64::from(*yi));
        }
    }

    #[test]
    fn pure_node_is_leaf() {
        let x = vec![vec![1.0], vec![2.0]];
        let t = grow_classifier(
            &x,
            &[1, 1],
            vec![(0, 1.0), (1, 1.0)],
            &ClassTreeParams {
                max_depth: 5,
                max_features: 1,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(
            t,
            TreeNode::Leaf {
                class_counts: [0.0, 2.0],
                value: 1.0
            }
        );
    }

    #[test]
    fn newton_leaf_values() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let grad: Vec<f64> = y.iter().map(|&v| 0.5 - f64::from(v)).collect();
        let hess = vec![0.25; 20];
        let params = RegTreeParams {
            max_depth: 1,
            lambda: 1.0,
            min_child_weight: 1.0,
        };
        let t = grow_regressor(&x, &y, &grad, &hess, &presort(&x), &params);
        // each side: G = -/+5, H = 2.5
        assert!((t.leaf_value(&[0.0]) - (-5.0 / 3.5)).abs() < 1e-12);
        assert!((t.leaf_value(&[19.0]) - (5.0 / 3.5)).abs() < 1e-12);
    }
}
