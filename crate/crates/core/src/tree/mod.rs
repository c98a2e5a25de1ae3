//! Decision trees and the ensembles built on them: random forests (with
//! mean-decrease-impurity importances), least-squares gradient boosting and
//! isolation forests. All share [`Tree`].

mod boosting;
mod forest;
mod isolation;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::num::Real;
use crate::seed;

pub use boosting::{fit_gradient_boosting, staged_mse, BoostingParams};
pub use forest::{fit_random_forest, gini, mdi_importance, ForestParams};
pub use isolation::{
    average_path_length, detect_anomalies, fit_isolation_forest, AnomalyReport, IsolationParams,
};

/// Format version of serialized ensembles.
pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "T: Real")]
pub enum NodeKind<T> {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { value: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Node<T> {
    pub kind: NodeKind<T>,
    pub n_samples: usize,
    pub impurity: T,
}

/// Flattened binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    fn leaf_of(&self, x: &[T]) -> (usize, usize) {
        let mut id = 0;
        let mut depth = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => return (id, depth),
                NodeKind::Split { feature, threshold, left, right } => {
                    id = if x[feature] <= threshold { left } else { right };
                    depth += 1;
                }
            }
        }
    }

    pub fn predict(&self, x: &[T]) -> T {
        match self.nodes[self.leaf_of(x).0].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], id: usize) -> usize {
            match nodes[id].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }
}

/// Node impurity used to grow a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Label variance (regression).
    #[default]
    Variance,
    /// Gini impurity over class labels `0, 1, .., k-1` (categorical target).
    Gini,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
    pub criterion: Criterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 8, min_leaf: 1, max_features: None, criterion: Criterion::Variance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    GradientBoosting,
    IsolationForest,
}

/// A fitted forest, boosted model or isolation forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TreeEnsemble<T> {
    pub format_version: u32,
    pub kind: EnsembleKind,
    pub n_features: usize,
    pub trees: Vec<Tree<T>>,
    /// Shrinkage (boosting only).
    pub learning_rate: T,
    /// Initial prediction (boosting only).
    pub base_score: T,
    /// Rows per tree ψ (isolation only).
    pub subsample_size: usize,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
}

impl<T: Real> TreeEnsemble<T> {
    fn check_row(&self, x: &[T]) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::NotFitted("ensemble has no trees".into()));
        }
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Regression output: forest mean, or base score plus shrunken tree sum.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.check_row(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[T]) -> T {
        match self.kind {
            EnsembleKind::GradientBoosting => {
                let mut sum = T::zero();
                for tree in &self.trees {
                    sum = sum + tree.predict(x);
                }
                self.base_score + self.learning_rate * sum
            }
            _ => {
                let sum: T = self.trees.iter().map(|t| t.predict(x)).sum();
                sum / T::from_usize_lossy(self.trees.len())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(text)?;
        if e.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported ensemble format {}", e.format_version)));
        }
        Ok(e)
    }
}

impl<T: Real> crate::shapley::Predict<T> for TreeEnsemble<T> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &[T]) -> T {
        self.predict_unchecked(x)
    }
}

/// Fits one CART tree on every row of `frame`.
pub fn fit_regression_tree<T: Real>(frame: &FeatureFrame<T>, params: &TreeParams, seed: u64) -> Result<Tree<T>> {
    if frame.n_rows() == 0 || frame.n_features() == 0 {
        return Err(Error::invalid("cannot fit a tree on an empty frame"));
    }
    let rows: Vec<usize> = (0..frame.n_rows()).collect();
    grow(frame.columns(), frame.label(), rows, params, &mut seed::rng(seed))
}

pub(crate) fn grow<T: Real>(
    columns: &[Vec<T>],
    y: &[T],
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut seed::Rng,
) -> Result<Tree<T>> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot fit a tree on zero rows"));
    }
    if params.min_leaf == 0 {
        return Err(Error::invalid("min_leaf must be >= 1"));
    }
    let n_classes = match params.criterion {
        Criterion::Gini => {
            let mut k = 0;
            for &v in y {
                let c = v.to_usize().filter(|&c| T::from_usize_lossy(c) == v).ok_or_else(|| {
                    Error::invalid(format!("gini criterion needs integer class labels, got {v}"))
                })?;
                k = k.max(c + 1);
            }
            k
        }
        Criterion::Variance => 0,
    };
    let builder = Builder { columns, y, params, n_classes };
    let mut nodes = Vec::new();
    builder.build(&mut nodes, rows, 0, rng);
    Ok(Tree { nodes })
}

struct Builder<'a, T> {
    columns: &'a [Vec<T>],
    y: &'a [T],
    params: &'a TreeParams,
    n_classes: usize,
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    cost: T,
}

impl<T: Real> Builder<'_, T> {
    fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &r in rows {
            counts[self.y[r].to_usize().unwrap()] += 1;
        }
        counts
    }

    /// Impurity and leaf value of a node.
    fn summarize(&self, rows: &[usize]) -> (T, T) {
        let n = T::from_usize_lossy(rows.len());
        match self.params.criterion {
            Criterion::Variance => {
                let m = rows.iter().map(|&r| self.y[r]).sum::<T>() / n;
                let var = rows.iter().map(|&r| (self.y[r] - m) * (self.y[r] - m)).sum::<T>() / n;
                (var, m)
            }
            Criterion::Gini => {
                let counts = self.class_counts(rows);
                let mut best = 0;
                for (c, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = c;
                    }
                }
                (gini::<T>(&counts), T::from_usize_lossy(best))
            }
        }
    }

    fn build(&self, nodes: &mut Vec<Node<T>>, rows: Vec<usize>, depth: usize, rng: &mut seed::Rng) -> usize {
        let (impurity, value) = self.summarize(&rows);
        let id = nodes.len();
        nodes.push(Node { kind: NodeKind::Leaf { value }, n_samples: rows.len(), impurity });

        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || impurity <= T::zero() {
            return id;
        }
        let Some(best) = self.best_split(&rows, impurity, rng) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.columns[best.feature][r] <= best.threshold);
        let left = self.build(nodes, left_rows, depth + 1, rng);
        let right = self.build(nodes, right_rows, depth + 1, rng);
        nodes[id].kind = NodeKind::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    fn best_split(&self, rows: &[usize], impurity: T, rng: &mut seed::Rng) -> Option<Candidate<T>> {
        let m = self.columns.len();
        let mut features: Vec<usize> = (0..m).collect();
        if let Some(k) = self.params.max_features.filter(|&k| k < m) {
            features.shuffle(rng);
            features.truncate(k.max(1));
            features.sort_unstable();
        }
        let n = T::from_usize_lossy(rows.len());
        let parent_cost = impurity * n;
        let tol = parent_cost.abs() * T::lit(1e-12);
        let mut best: Option<Candidate<T>> = None;
        let mut sorted = rows.to_vec();
        for &f in &features {
            let col = &self.columns[f];
            sorted.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap_or(std::cmp::Ordering::Equal));
            if let Some(c) = self.scan_feature(f, &sorted) {
                let better = match &best {
                    None => c.cost < parent_cost - tol,
                    Some(b) => c.cost < b.cost,
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Lowest total child cost (n·impurity summed over children) over the
    /// midpoints between consecutive distinct values of one feature.
    fn scan_feature(&self, feature: usize, sorted: &[usize]) -> Option<Candidate<T>> {
        let col = &self.columns[feature];
        let n = sorted.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<(usize, T)> = None;
        match self.params.criterion {
            Criterion::Variance => {
                // Centre on the node mean to limit cancellation in the sums.
                let mean = sorted.iter().map(|&r| self.y[r]).sum::<T>() / T::from_usize_lossy(n);
                let total: T = sorted.iter().map(|&r| self.y[r] - mean).sum();
                let total_sq: T = sorted.iter().map(|&r| (self.y[r] - mean) * (self.y[r] - mean)).sum();
                let (mut s, mut sq) = (T::zero(), T::zero());
                for i in 0..n - 1 {
                    let v = self.y[sorted[i]] - mean;
                    s = s + v;
                    sq = sq + v * v;
                    let (nl, nr) = (i + 1, n - i - 1);
                    if nl < min_leaf || nr < min_leaf || col[sorted[i]] >= col[sorted[i + 1]] {
                        continue;
                    }
                    let (fl, fr) = (T::from_usize_lossy(nl), T::from_usize_lossy(nr));
                    let sr = total - s;
                    let cost = (sq - s * s / fl) + ((total_sq - sq) - sr * sr / fr);
                    if best.is_none_or(|(_, c)| cost < c) {
                        best = Some((i, cost));
                    }
                }
            }
            Criterion::Gini => {
                let mut left = vec![0usize; self.n_classes];
                let mut right = self.class_counts(sorted);
                for i in 0..n - 1 {
                    let c = self.y[sorted[i]].to_usize().unwrap();
                    left[c] += 1;
                    right[c] -= 1;
                    let (nl, nr) = (i + 1, n - i - 1);
                    if nl < min_leaf || nr < min_leaf || col[sorted[i]] >= col[sorted[i + 1]] {
                        continue;
                    }
                    let cost = T::from_usize_lossy(nl) * gini::<T>(&left) + T::from_usize_lossy(nr) * gini::<T>(&right);
                    if best.is_none_or(|(_, c)| cost < c) {
                        best = Some((i, cost));
                    }
                }
            }
        }
        best.map(|(i, cost)| {
            let (lo, hi) = (col[sorted[i]], col[sorted[i + 1]]);
            let mid = (lo + hi) / T::lit(2.0);
            let threshold = if mid >= hi { lo } else { mid };
            Candidate { feature, threshold, cost }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureName;

    fn frame(cols: Vec<Vec<f64>>, y: Vec<f64>) -> FeatureFrame<f64> {
        let names = FeatureName::ALL[..cols.len()].to_vec();
        FeatureFrame::new(names, cols, y).unwrap()
    }

    #[test]
    fn constant_labels_give_single_leaf() {
        let f = frame(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![7.0; 4]);
        let t = fit_regression_tree(&f, &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[10.0]), 7.0);
    }

    #[test]
    fn step_function_split_location() {
        // Six points, y = 1 when x1 > 5. Valid thresholds lie in (4, 6).
        let x1 = vec![1.0, 3.0, 4.0, 6.0, 8.0, 9.0];
        let x2 = vec![5.0, 1.0, 6.0, 2.0, 4.0, 3.0];
        let y: Vec<f64> = x1.iter().map(|&v| if v > 5.0 { 1.0 } else { 0.0 }).collect();
        let f = frame(vec![x1, x2], y);
        let params = TreeParams { max_depth: 1, ..Default::default() };
        let t = fit_regression_tree(&f, &params, 0).unwrap();
        match t.nodes[0].kind {
            NodeKind::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!(threshold > 4.0 && threshold < 6.0);
                assert_eq!(threshold, 5.0);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn min_leaf_equal_to_n_forces_leaf() {
        let f = frame(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![1.0, 2.0, 3.0, 10.0]);
        let params = TreeParams { min_leaf: 4, ..Default::default() };
        let t = fit_regression_tree(&f, &params, 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[0.0]), 4.0);
    }

    #[test]
    fn child_counts_sum_to_parent() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v / 7.0).sin()).collect();
        let f = frame(vec![x], y);
        let t = fit_regression_tree(&f, &TreeParams { max_depth: 6, ..Default::default() }, 0).unwrap();
        for n in &t.nodes {
            if let NodeKind::Split { left, right, .. } = n.kind {
                assert_eq!(t.nodes[left].n_samples + t.nodes[right].n_samples, n.n_samples);
            }
        }
    }

    #[test]
    fn gini_tree_separates_classes() {
        let x = vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let f = frame(vec![x], y);
        let params = TreeParams { criterion: Criterion::Gini, ..Default::default() };
        let t = fit_regression_tree(&f, &params, 0).unwrap();
        assert_eq!(t.nodes[0].impurity, 0.5);
        assert_eq!(t.predict(&[1.5]), 0.0);
        assert_eq!(t.predict(&[11.5]), 1.0);
        let bad = frame(vec![vec![0.0, 1.0]], vec![0.5, 1.0]);
        assert!(fit_regression_tree(&bad, &params, 0).is_err());
    }

    #[test]
    fn empty_frame_is_an_error() {
        let f = frame(vec![vec![]], vec![]);
        assert!(fit_regression_tree(&f, &TreeParams::default(), 0).is_err());
    }
}
