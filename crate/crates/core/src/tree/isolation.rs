use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnsembleKind, Node, NodeKind, Tree, TreeEnsemble, ENSEMBLE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::num::Real;
use crate::seed;

const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationParams {
    pub n_trees: usize,
    /// ψ; capped at the row count by [`detect_anomalies`].
    pub subsample_size: usize,
}

impl Default for IsolationParams {
    fn default() -> Self {
        IsolationParams { n_trees: 100, subsample_size: 256 }
    }
}

/// Expected path length `c(n)` of an unsuccessful binary-search-tree lookup
/// among `n` points: `2 H(n-1) - 2 (n-1)/n` with `H(i) = ln i + γ`;
/// `c(2) = 1` and `c(n) = 0` for `n < 2`.
pub fn average_path_length<T: Real>(n: usize) -> T {
    match n {
        0 | 1 => T::zero(),
        2 => T::one(),
        _ => {
            let m = T::from_usize_lossy(n - 1);
            T::lit(2.0) * (m.ln() + T::lit(EULER_GAMMA)) - T::lit(2.0) * m / T::from_usize_lossy(n)
        }
    }
}

/// Rows are brought into lexicographic order before subsampling, so the
/// fitted forest depends on the set of rows and the seed but not on row
/// order.
pub fn fit_isolation_forest<T: Real>(frame: &FeatureFrame<T>, params: &IsolationParams, seed: u64) -> Result<TreeEnsemble<T>> {
    let rows = canonical_rows(frame);
    fit_rows(&rows, frame.n_features(), params, seed)
}

fn canonical_rows<T: Real>(frame: &FeatureFrame<T>) -> Vec<Vec<T>> {
    let mut rows = frame.rows();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

fn fit_rows<T: Real>(rows: &[Vec<T>], m: usize, params: &IsolationParams, seed: u64) -> Result<TreeEnsemble<T>> {
    let n = rows.len();
    let psi = params.subsample_size;
    if psi < 2 {
        return Err(Error::invalid(format!("subsample size {psi} must be >= 2")));
    }
    if psi > n {
        return Err(Error::invalid(format!("subsample size {psi} exceeds {n} rows")));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be >= 1"));
    }
    if m == 0 {
        return Err(Error::invalid("no features"));
    }
    let max_depth = (psi as f64).log2().ceil() as usize;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, i as u64));
            let sample = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            let mut nodes = Vec::new();
            grow_isolation(rows, m, sample, 0, max_depth, &mut nodes, &mut rng);
            Tree { nodes }
        })
        .collect();
    Ok(TreeEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        kind: EnsembleKind::IsolationForest,
        n_features: m,
        trees,
        learning_rate: T::one(),
        base_score: T::zero(),
        subsample_size: psi,
        seed,
        hyperparameters: serde_json::to_value(params)?,
    })
}

fn grow_isolation<T: Real>(
    rows: &[Vec<T>],
    m: usize,
    sample: Vec<usize>,
    depth: usize,
    max_depth: usize,
    nodes: &mut Vec<Node<T>>,
    rng: &mut seed::Rng,
) -> usize {
    let id = nodes.len();
    nodes.push(Node { kind: NodeKind::Leaf { value: T::zero() }, n_samples: sample.len(), impurity: T::zero() });
    if depth >= max_depth || sample.len() <= 1 {
        return id;
    }
    let feature = rng.random_range(0..m);
    let (lo, hi) = sample.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &r| {
        (lo.min(rows[r][feature]), hi.max(rows[r][feature]))
    });
    let threshold = lo + T::lit(rng.random::<f64>()) * (hi - lo);
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = sample.into_iter().partition(|&r| rows[r][feature] <= threshold);
    let left = grow_isolation(rows, m, left_rows, depth + 1, max_depth, nodes, rng);
    let right = grow_isolation(rows, m, right_rows, depth + 1, max_depth, nodes, rng);
    nodes[id].kind = NodeKind::Split { feature, threshold, left, right };
    id
}

impl<T: Real> TreeEnsemble<T> {
    /// Mean adjusted path length `E(h(x))`.
    pub fn mean_path_length(&self, x: &[T]) -> Result<T> {
        if self.kind != EnsembleKind::IsolationForest {
            return Err(Error::invalid("path length needs an isolation forest"));
        }
        self.check_row(x)?;
        let total: T = self
            .trees
            .iter()
            .map(|t| {
                let (leaf, depth) = t.leaf_of(x);
                T::from_usize_lossy(depth) + average_path_length::<T>(t.nodes[leaf].n_samples)
            })
            .sum();
        Ok(total / T::from_usize_lossy(self.trees.len()))
    }

    /// Anomaly score `2^(-E(h(x)) / c(ψ))`, in (0, 1).
    pub fn anomaly_score(&self, x: &[T]) -> Result<T> {
        let h = self.mean_path_length(x)?;
        Ok(T::lit(2.0).powf(-h / average_path_length::<T>(self.subsample_size)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport<T> {
    pub scores: Vec<T>,
    /// Flagged row indices, highest score first.
    pub flagged: Vec<usize>,
}

/// Flags the `ceil(contamination · n)` highest-scoring rows (ties to the
/// lower index). ψ is capped at the row count.
pub fn detect_anomalies<T: Real>(
    frame: &FeatureFrame<T>,
    contamination: f64,
    params: &IsolationParams,
    seed: u64,
) -> Result<AnomalyReport<T>> {
    if !(0.0..0.5).contains(&contamination) {
        return Err(Error::invalid(format!("contamination {contamination} not in [0, 0.5)")));
    }
    let n = frame.n_rows();
    let params = IsolationParams { subsample_size: params.subsample_size.min(n), ..*params };
    let forest = fit_isolation_forest(frame, &params, seed)?;
    let scores = (0..n).map(|i| forest.anomaly_score(&frame.row(i))).collect::<Result<Vec<T>>>()?;
    let n_flag = ((contamination * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(n_flag);
    Ok(AnomalyReport { scores, flagged: order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureName;
    use rand_distr::{Distribution, StandardNormal};

    fn blob(n: usize, seed: u64, outlier: bool) -> FeatureFrame<f64> {
        let mut rng = seed::rng(seed);
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if outlier {
            x[n / 2] = 10.0;
            y[n / 2] = 10.0;
        }
        FeatureFrame::new(vec![FeatureName::D, FeatureName::T], vec![x, y], vec![0.0; n]).unwrap()
    }

    #[test]
    fn c_of_256() {
        let c: f64 = average_path_length(256);
        let hand = 2.0 * (255.0_f64.ln() + 0.5772) - 510.0 / 256.0;
        assert!((c - hand).abs() < 1e-3);
        assert!((c - 10.244).abs() < 0.01);
    }

    #[test]
    fn score_at_average_depth_is_half() {
        let c: f64 = average_path_length(64);
        assert!((2.0_f64.powf(-c / c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_points_score_identically() {
        let f = FeatureFrame::new(vec![FeatureName::D], vec![vec![3.0; 32]], vec![0.0; 32]).unwrap();
        let forest = fit_isolation_forest(&f, &IsolationParams { n_trees: 20, subsample_size: 16 }, 4).unwrap();
        let h = forest.mean_path_length(&[3.0]).unwrap();
        assert!((h - (4.0 + average_path_length::<f64>(16))).abs() < 1e-12);
        let report = detect_anomalies(&f, 0.0, &IsolationParams { n_trees: 20, subsample_size: 16 }, 4).unwrap();
        assert!(report.scores.windows(2).all(|w| w[0] == w[1]));
        assert!(report.flagged.is_empty());
    }

    #[test]
    fn depth_cap_and_determinism() {
        let f = blob(300, 1, false);
        let p = IsolationParams { n_trees: 10, subsample_size: 64 };
        let a = fit_isolation_forest(&f, &p, 3).unwrap();
        assert!(a.trees.iter().all(|t| t.depth() <= 6));
        assert_eq!(a, fit_isolation_forest(&f, &p, 3).unwrap());
    }

    #[test]
    fn planted_outlier_has_maximum_score() {
        let f = blob(200, 7, true);
        let report = detect_anomalies(&f, 0.01, &IsolationParams { n_trees: 200, subsample_size: 256 }, 11).unwrap();
        let argmax = (0..200).max_by(|&a, &b| report.scores[a].partial_cmp(&report.scores[b]).unwrap()).unwrap();
        assert_eq!(argmax, 100);
        assert_eq!(report.flagged.len(), 2);
        assert_eq!(report.flagged[0], 100);
        assert!(report.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn flag_count_matches_contamination() {
        let f = blob(100, 2, false);
        let r = detect_anomalies(&f, 0.1, &IsolationParams::default(), 0).unwrap();
        assert_eq!(r.flagged.len(), 10);
        assert!(detect_anomalies(&f, 0.5, &IsolationParams::default(), 0).is_err());
    }

    #[test]
    fn invalid_params() {
        let f = blob(10, 2, false);
        assert!(fit_isolation_forest(&f, &IsolationParams { n_trees: 5, subsample_size: 11 }, 0).is_err());
        assert!(fit_isolation_forest(&f, &IsolationParams { n_trees: 5, subsample_size: 1 }, 0).is_err());
        assert!(fit_isolation_forest(&f, &IsolationParams { n_trees: 0, subsample_size: 4 }, 0).is_err());
    }

    #[test]
    fn scores_ignore_row_order() {
        let f = blob(120, 5, false);
        let mut idx: Vec<usize> = (0..120).collect();
        idx.reverse();
        let shuffled = f.take_rows(&idx);
        let p = IsolationParams { n_trees: 25, subsample_size: 64 };
        let (a, b) = (fit_isolation_forest(&f, &p, 9).unwrap(), fit_isolation_forest(&shuffled, &p, 9).unwrap());
        for i in 0..120 {
            let row = f.row(i);
            assert_eq!(a.anomaly_score(&row).unwrap(), b.anomaly_score(&row).unwrap());
        }
    }
}
