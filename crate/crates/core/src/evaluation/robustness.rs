use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricOptions};
use crate::data::Dataset;
use crate::dknn::{train_split, ConstraintSpec, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::features::FeatureName;
use crate::num::Real;
use crate::seed;

/// Multiplies each label by `1 + δ`, `δ ~ U(−d, d)`, with probability `p`.
///
/// Both the selection draw `u` and `δ` are taken for every label, so for a
/// fixed seed the perturbed set grows monotonically with `p` and a label's
/// relative change scales linearly with `d`.
pub fn perturb_labels<T: Real>(labels: &[T], p: f64, d: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("perturbation ratio {p} not in [0, 1]")));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("perturbation magnitude {d} must be >= 0")));
    }
    let mut rng = seed::rng(seed);
    Ok(labels
        .iter()
        .map(|&y| {
            let u: f64 = rng.random();
            let delta = d * (2.0 * rng.random::<f64>() - 1.0);
            if u < p {
                y * T::lit(1.0 + delta)
            } else {
                y
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Ratios swept at fixed magnitude `d_fixed`.
    pub p_levels: Vec<f64>,
    pub d_fixed: f64,
    /// Magnitudes swept at fixed ratio `p_fixed`.
    pub d_levels: Vec<f64>,
    pub p_fixed: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            p_levels: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            d_fixed: 0.2,
            d_levels: vec![0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            p_fixed: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    P,
    D,
}

impl SweepConfig {
    /// `(axis, p, d)` for every level of both sweeps.
    pub fn levels(&self) -> Vec<(SweepAxis, f64, f64)> {
        let mut out: Vec<_> = self.p_levels.iter().map(|&p| (SweepAxis::P, p, self.d_fixed)).collect();
        out.extend(self.d_levels.iter().map(|&d| (SweepAxis::D, self.p_fixed, d)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub variant: Variant,
    pub axis: SweepAxis,
    pub p: f64,
    pub d: f64,
    /// Validation MAPE (percent) on clean labels; `None` if training failed.
    pub mape: Option<f64>,
    pub error: Option<String>,
}

/// Trains every variant at every level on perturbed training labels and
/// scores it on the clean validation split. Cells run in parallel.
///
/// All cells share one perturbation stream derived from `seed`, so levels
/// differ only in noise level and variants see identical noisy labels.
pub fn robustness_sweep<T: Real>(
    dataset: &Dataset<T>,
    features: &[FeatureName],
    base: &ConstraintSpec,
    variants: &[Variant],
    levels: &[(SweepAxis, f64, f64)],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<RobustnessCell>> {
    let split = dataset.split()?;
    let train = dataset.subset(&split.train);
    let validation = dataset.subset(&split.validation);
    let labels: Vec<T> = train.iter().map(|s| s.n).collect();
    let truth: Vec<T> = validation.iter().map(|s| s.n).collect();
    for &(_, p, d) in levels {
        if !(0.0..=1.0).contains(&p) || !(d >= 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("invalid sweep level p = {p}, d = {d}")));
        }
    }
    let perturb_seed = seed::derive_named(seed, "perturb");
    let jobs: Vec<(Variant, (SweepAxis, f64, f64))> =
        levels.iter().flat_map(|&l| variants.iter().map(move |&v| (v, l))).collect();
    Ok(jobs
        .par_iter()
        .map(|&(variant, (axis, p, d))| {
            let run = || -> Result<f64> {
                let noisy = perturb_labels(&labels, p, d, perturb_seed)?;
                let mut tr = train.clone();
                for (s, y) in tr.iter_mut().zip(noisy) {
                    s.n = y;
                }
                let model = train_split(&tr, &validation, features, &variant.constraint(base), config)?.model;
                let pred = model.predict_many(&validation)?;
                Ok(compute_metrics(&truth, &pred, MetricOptions::default())?.mape.as_f64())
            };
            match run() {
                Ok(m) => RobustnessCell { variant, axis, p, d, mape: Some(m), error: None },
                Err(e) => RobustnessCell { variant, axis, p, d, mape: None, error: Some(e.to_string()) },
            }
        })
        .collect())
}

pub fn write_robustness_csv<W: Write>(writer: W, cells: &[RobustnessCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variant", "axis", "p", "d", "mape", "error"])?;
    for c in cells {
        w.write_record([
            c.variant.as_str().to_string(),
            format!("{:?}", c.axis).to_lowercase(),
            c.p.to_string(),
            c.d.to_string(),
            c.mape.map_or(String::new(), |m| m.to_string()),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<robustness writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ratio_or_magnitude_is_identity() {
        let y: Vec<f64> = (1..100).map(|i| i as f64).collect();
        assert_eq!(perturb_labels(&y, 0.0, 0.3, 1).unwrap(), y);
        assert_eq!(perturb_labels(&y, 0.7, 0.0, 1).unwrap(), y);
    }

    #[test]
    fn full_ratio_bounds() {
        let y = vec![250.0; 10_000];
        let z = perturb_labels(&y, 1.0, 0.1, 3).unwrap();
        assert!(z.iter().all(|&v| (225.0..=275.0).contains(&v)));
        assert_eq!(z.iter().filter(|&&v| v != 250.0).count(), 10_000);
    }

    #[test]
    fn perturbed_fraction_and_reproducibility() {
        let y = vec![1.0; 10_000];
        for p in [0.1, 0.3, 0.5] {
            let z = perturb_labels(&y, p, 0.2, 11).unwrap();
            let frac = z.iter().filter(|&&v| v != 1.0).count() as f64 / 1e4;
            assert!((frac - p).abs() < 0.02, "p {p}: {frac}");
            assert_eq!(z, perturb_labels(&y, p, 0.2, 11).unwrap());
        }
    }

    #[test]
    fn perturbed_sets_are_nested_in_p() {
        let y = vec![1.0; 1000];
        let a = perturb_labels(&y, 0.2, 0.2, 4).unwrap();
        let b = perturb_labels(&y, 0.4, 0.2, 4).unwrap();
        for (x, z) in a.iter().zip(&b) {
            if *x != 1.0 {
                assert_eq!(x, z);
            }
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(perturb_labels(&[1.0], 1.5, 0.1, 0).is_err());
        assert!(perturb_labels(&[1.0], 0.5, -0.1, 0).is_err());
    }

    #[test]
    fn default_levels() {
        let l = SweepConfig::default().levels();
        assert_eq!(l.len(), 11);
        assert_eq!(l[0], (SweepAxis::P, 0.1, 0.2));
        assert_eq!(l[10], (SweepAxis::D, 0.3, 0.3));
    }
}
