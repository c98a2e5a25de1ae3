use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{grow, Criterion, EnsembleKind, NodeKind, TreeEnsemble, TreeParams, ENSEMBLE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::num::Real;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ceil(sqrt(M)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub criterion: Criterion,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 1,
            max_features: None,
            bootstrap: true,
            criterion: Criterion::Variance,
        }
    }
}

/// Gini impurity `1 - Σ p_k²` of a class-count vector.
pub fn gini<T: Real>(counts: &[usize]) -> T {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return T::zero();
    }
    let n = T::from_usize_lossy(n);
    T::one()
        - counts
            .iter()
            .map(|&c| {
                let p = T::from_usize_lossy(c) / n;
                p * p
            })
            .sum::<T>()
}

pub fn fit_random_forest<T: Real>(frame: &FeatureFrame<T>, params: &ForestParams, seed: u64) -> Result<TreeEnsemble<T>> {
    let n = frame.n_rows();
    let m = frame.n_features();
    if n == 0 || m == 0 {
        return Err(Error::invalid("cannot fit a forest on an empty frame"));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be >= 1"));
    }
    let max_features = params.max_features.unwrap_or_else(|| (m as f64).sqrt().ceil() as usize).clamp(1, m);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: Some(max_features),
        criterion: params.criterion,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed, i as u64));
            let rows: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            grow(frame.columns(), frame.label(), rows, &tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        kind: EnsembleKind::RandomForest,
        n_features: m,
        trees,
        learning_rate: T::one(),
        base_score: T::zero(),
        subsample_size: n,
        seed,
        hyperparameters: serde_json::to_value(params)?,
    })
}

/// Mean decrease in impurity per feature, normalized to sum to one.
///
/// Each split contributes `(n_node / n_root) · (I_node − n_l/n_node · I_l −
/// n_r/n_node · I_r)`; contributions are averaged over trees. All zeros
/// when no tree has a split.
pub fn mdi_importance<T: Real>(forest: &TreeEnsemble<T>) -> Result<Vec<T>> {
    if forest.kind != EnsembleKind::RandomForest {
        return Err(Error::invalid("MDI importance needs a random forest"));
    }
    if forest.trees.is_empty() {
        return Err(Error::NotFitted("forest has no trees".into()));
    }
    let mut total = vec![T::zero(); forest.n_features];
    for tree in &forest.trees {
        let root_n = T::from_usize_lossy(tree.nodes[0].n_samples);
        for node in &tree.nodes {
            if let NodeKind::Split { feature, left, right, .. } = node.kind {
                let (l, r) = (&tree.nodes[left], &tree.nodes[right]);
                let nn = T::from_usize_lossy(node.n_samples);
                let child = (T::from_usize_lossy(l.n_samples) * l.impurity + T::from_usize_lossy(r.n_samples) * r.impurity) / nn;
                let decrease = (node.impurity - child).max(T::zero());
                total[feature] = total[feature] + nn / root_n * decrease;
            }
        }
    }
    let k = T::from_usize_lossy(forest.trees.len());
    let mean: Vec<T> = total.into_iter().map(|v| v / k).collect();
    let sum: T = mean.iter().copied().sum();
    if sum > T::zero() {
        Ok(mean.into_iter().map(|v| v / sum).collect())
    } else {
        Ok(mean)
    }
}
