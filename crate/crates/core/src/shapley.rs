//! Shapley attributions with the interventional value function: features
//! outside a coalition take their values from background rows, and the
//! coalition value is the mean prediction over the background.
//!
//! Two estimators share that value function: exact enumeration of all 2^M
//! coalitions (M ≤ [`MAX_EXACT_FEATURES`]) and permutation sampling.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::seed;

pub const MAX_EXACT_FEATURES: usize = 12;

/// A scalar-valued model over feature rows.
pub trait Predict<T>: Sync {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[T]) -> T;
}

/// Wraps a closure as a [`Predict`] model.
pub struct FnModel<F> {
    pub n_features: usize,
    pub f: F,
}

impl<T, F: Fn(&[T]) -> T + Sync> Predict<T> for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    Exact,
    Sampled { n_permutations: usize },
}

/// Attributions for one explained row: `base + Σ phi ≈ f(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Attribution<T> {
    /// Mean prediction over the background (φ0).
    pub base: T,
    pub phi: Vec<T>,
}

fn check<T: Real, M: Predict<T> + ?Sized>(model: &M, x: &[T], background: &[Vec<T>]) -> Result<()> {
    let m = model.n_features();
    if x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x.len() });
    }
    if background.is_empty() {
        return Err(Error::invalid("background sample is empty"));
    }
    if let Some(b) = background.iter().find(|b| b.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    Ok(())
}

fn base_value<T: Real, M: Predict<T> + ?Sized>(model: &M, background: &[Vec<T>]) -> T {
    background.iter().map(|b| model.predict(b)).sum::<T>() / T::from_usize_lossy(background.len())
}

/// Exact Shapley values by enumerating every coalition.
pub fn exact<T: Real, M: Predict<T> + ?Sized>(model: &M, x: &[T], background: &[Vec<T>]) -> Result<Attribution<T>> {
    check(model, x, background)?;
    let m = x.len();
    if m > MAX_EXACT_FEATURES {
        return Err(Error::invalid(format!("exact Shapley limited to {MAX_EXACT_FEATURES} features, got {m}")));
    }
    let n_bg = T::from_usize_lossy(background.len());
    let values: Vec<T> = (0..1usize << m)
        .into_par_iter()
        .map(|mask| {
            let mut z = vec![T::zero(); m];
            let mut total = T::zero();
            for b in background {
                for j in 0..m {
                    z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
                }
                total = total + model.predict(&z);
            }
            total / n_bg
        })
        .collect();

    // weight[s] = s! (m - s - 1)! / m!
    let weights: Vec<f64> = (0..m)
        .map(|s| {
            let mut w = 1.0 / m as f64;
            // 1 / (m · C(m-1, s))
            let mut c = 1.0;
            for k in 0..s {
                c = c * (m - 1 - k) as f64 / (k + 1) as f64;
            }
            w /= c;
            w
        })
        .collect();
    let phi = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = T::zero();
            for mask in 0..1usize << m {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    acc = acc + T::lit(weights[s]) * (values[mask | bit] - values[mask]);
                }
            }
            acc
        })
        .collect();
    Ok(Attribution { base: values[0], phi })
}

/// Permutation-sampling estimate. For each sampled feature order, features
/// are switched from background to explained values one at a time, for
/// every background row; marginal changes are averaged. Attributions sum
/// exactly to `f(x) - base`.
pub fn sampled<T: Real, M: Predict<T> + ?Sized>(
    model: &M,
    x: &[T],
    background: &[Vec<T>],
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution<T>> {
    check(model, x, background)?;
    if n_permutations < 1 {
        return Err(Error::invalid("n_permutations must be >= 1"));
    }
    let m = x.len();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut phi = vec![T::zero(); m];
    let mut z = vec![T::zero(); m];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        for b in background {
            z.copy_from_slice(b);
            let mut prev = model.predict(&z);
            for &j in &order {
                z[j] = x[j];
                let next = model.predict(&z);
                phi[j] = phi[j] + (next - prev);
                prev = next;
            }
        }
    }
    let denom = T::from_usize_lossy(n_permutations * background.len());
    Ok(Attribution { base: base_value(model, background), phi: phi.into_iter().map(|p| p / denom).collect() })
}

pub fn explain<T: Real, M: Predict<T> + ?Sized>(
    model: &M,
    x: &[T],
    background: &[Vec<T>],
    mode: ShapleyMode,
    seed: u64,
) -> Result<Attribution<T>> {
    match mode {
        ShapleyMode::Exact => exact(model, x, background),
        ShapleyMode::Sampled { n_permutations } => sampled(model, x, background, n_permutations, seed),
    }
}

/// Per-row attributions and the global importance `C_i = mean_j |φ_ij|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ShapleyImportance<T> {
    pub attributions: Vec<Attribution<T>>,
    pub global: Vec<T>,
}

/// Explains every row (rows in parallel, one derived seed per row).
pub fn shapley_importance<T: Real, M: Predict<T> + ?Sized>(
    model: &M,
    rows: &[Vec<T>],
    background: &[Vec<T>],
    mode: ShapleyMode,
    seed: u64,
) -> Result<ShapleyImportance<T>> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to explain"));
    }
    let attributions = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| explain(model, r, background, mode, seed::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let m = model.n_features();
    let n = T::from_usize_lossy(rows.len());
    let global = (0..m).map(|i| attributions.iter().map(|a| a.phi[i].abs()).sum::<T>() / n).collect();
    Ok(ShapleyImportance { attributions, global })
}
