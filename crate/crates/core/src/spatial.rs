//! k-d tree for exact Euclidean k-nearest-neighbor queries.
//!
//! Neighbors are ordered by `(squared distance, row index)`, so ties resolve
//! toward the lower row index exactly as an exhaustive scan would.

use alloc::vec::Vec;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A neighbor row index with its Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl KdTree {
    /// Builds over `rows`, each of length `dim`.
    pub fn build(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            debug_assert_eq!(r.len(), dim);
            points.extend_from_slice(r);
        }
        let mut tree = Self {
            dim,
            points,
            order: (0..rows.len()).collect(),
            nodes: Vec::new(),
        };
        if !rows.is_empty() {
            tree.build_node(0, rows.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn coord(&self, row: usize, d: usize) -> f64 {
        self.points[row * self.dim + d]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE || self.dim == 0 {
            return id;
        }
        let mut best = (0, 0.0);
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| {
                let v = self.coord(r, d);
                (l.min(v), h.max(v))
            });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            return id;
        }
        let dim = best.0;
        let mut slice: Vec<usize> = self.order[start..end].to_vec();
        slice.sort_by(|&a, &b| self.coord(a, dim).total_cmp(&self.coord(b, dim)).then(a.cmp(&b)));
        self.order[start..end].copy_from_slice(&slice);
        let mid = start + (end - start) / 2;
        let value = self.coord(self.order[mid], dim);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn dist2(&self, row: usize, q: &[f64]) -> f64 {
        let p = &self.points[row * self.dim..(row + 1) * self.dim];
        p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// The `k` nearest rows to `query`, nearest first, optionally skipping
    /// one row (the query's own).
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut best);
        }
        best.into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: libm::sqrt(d2),
            })
            .collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &row in &self.order[start..end] {
                    if Some(row) == exclude {
                        continue;
                    }
                    let cand = (self.dist2(row, q), row);
                    let before = |b: &(f64, usize)| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1);
                    if best.len() == k && !before(&best[k - 1]) {
                        continue;
                    }
                    let pos = best.iter().position(before).unwrap_or(best.len());
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(rows: &[Vec<f64>], q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.random_range(1..120);
            let d = rng.random_range(1..6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let tree = KdTree::build(&rows);
            for i in 0..n {
                let k = 1 + trial % 7;
                let got: Vec<usize> = tree.nearest(&rows[i], k, Some(i)).iter().map(|n| n.index).collect();
                assert_eq!(got, brute(&rows, &rows[i], k, Some(i)));
            }
        }
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        // grid with many equal distances
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64, (i / 4 % 3) as f64]).collect();
        let tree = KdTree::build(&rows);
        for i in 0..rows.len() {
            let got: Vec<usize> = tree.nearest(&rows[i], 6, Some(i)).iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&rows, &rows[i], 6, Some(i)));
        }
    }

    #[test]
    fn fewer_rows_than_k() {
        let rows = vec![vec![0.0], vec![1.0]];
        let tree = KdTree::build(&rows);
        assert_eq!(tree.nearest(&[0.0], 5, Some(0)).len(), 1);
        assert!(KdTree::build(&[]).nearest(&[0.0], 3, None).is_empty());
    }
}
