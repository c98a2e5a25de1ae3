use serde::{Deserialize, Serialize};

use super::{grow, EnsembleKind, TreeEnsemble, TreeParams, ENSEMBLE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::num::{mean, Real};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams { n_trees: 200, max_depth: 4, min_leaf: 1, learning_rate: 0.1 }
    }
}

/// Stagewise least-squares boosting: each tree fits the current residuals.
pub fn fit_gradient_boosting<T: Real>(
    frame: &FeatureFrame<T>,
    params: &BoostingParams,
    seed: u64,
) -> Result<TreeEnsemble<T>> {
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be >= 1"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid(format!("learning_rate = {} not in (0, 1]", params.learning_rate)));
    }
    let n = frame.n_rows();
    if n == 0 || frame.n_features() == 0 {
        return Err(Error::invalid("cannot boost on an empty frame"));
    }
    let y = frame.label();
    let base_score = mean(y).unwrap();
    let lr = T::lit(params.learning_rate);
    let tree_params =
        TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf, ..Default::default() };

    let mut tree_sum = vec![T::zero(); n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut rng = seed::rng(seed);
    for _ in 0..params.n_trees {
        let residual: Vec<T> = (0..n).map(|i| y[i] - (base_score + lr * tree_sum[i])).collect();
        let tree = grow(frame.columns(), &residual, (0..n).collect(), &tree_params, &mut rng)?;
        for (i, s) in tree_sum.iter_mut().enumerate() {
            *s = *s + tree.predict(&frame.row(i));
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        format_version: ENSEMBLE_FORMAT_VERSION,
        kind: EnsembleKind::GradientBoosting,
        n_features: frame.n_features(),
        trees,
        learning_rate: lr,
        base_score,
        subsample_size: n,
        seed,
        hyperparameters: serde_json::to_value(params)?,
    })
}

/// Training MSE after 0, 1, .., n_trees stages.
pub fn staged_mse<T: Real>(model: &TreeEnsemble<T>, frame: &FeatureFrame<T>) -> Vec<T> {
    let rows = frame.rows();
    let mut sums = vec![T::zero(); rows.len()];
    let mse = |sums: &[T]| {
        let se: T = rows
            .iter()
            .zip(sums)
            .zip(frame.label())
            .map(|((_, &s), &y)| {
                let r = y - (model.base_score + model.learning_rate * s);
                r * r
            })
            .sum();
        se / T::from_usize_lossy(rows.len())
    };
    let mut out = vec![mse(&sums)];
    for tree in &model.trees {
        for (s, row) in sums.iter_mut().zip(&rows) {
            *s = *s + tree.predict(row);
        }
        out.push(mse(&sums));
    }
    out
}
