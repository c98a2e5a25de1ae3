use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{dominance_pairs, ConstraintSpec};
use super::network::Network;
use super::train::TrainConfig;
use crate::data::{LabelTransform, Specimen};
use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureRecord};
use crate::num::Real;
use crate::shapley::Predict;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Elementwise map applied to raw inputs before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputTransform {
    #[default]
    Identity,
    /// Natural log; every selected feature is positive for a valid specimen.
    Log,
}

impl InputTransform {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            InputTransform::Identity => x,
            InputTransform::Log => x.ln(),
        }
    }
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Normalization<T> {
    #[serde(default)]
    pub transform: InputTransform,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Normalization<T> {
    /// A zero standard deviation is replaced by one.
    pub fn fit(rows: &[Vec<T>], transform: InputTransform) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("cannot fit normalization on zero rows"));
        };
        let rows: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| transform.apply(v)).collect()).collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("input transform produced a non-finite feature".into()));
        }
        let m = first.len();
        let n = T::from_usize_lossy(rows.len());
        let mean: Vec<T> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<T>() / n).collect();
        let std = (0..m)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]) * (r[j] - mean[j])).sum::<T>() / n;
                let s = v.sqrt();
                if s > T::zero() {
                    s
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Normalization { transform, mean, std })
    }

    pub fn apply(&self, row: &[T]) -> Vec<T> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((&x, &m), &s)| (self.transform.apply(x) - m) / s).collect()
    }
}

/// A trained network with everything needed to predict from a specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Model<T> {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub network: Network<T>,
    pub normalization: Normalization<T>,
    pub label_transform: LabelTransform,
    /// Input order of the network.
    pub features: Vec<FeatureName>,
    pub constraint: ConstraintSpec,
    pub train_config: TrainConfig,
    pub seed: u64,
}

impl<T: Real> Model<T> {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Raw feature row → network output in transformed label space.
    pub fn forward_raw(&self, raw: &[T]) -> Result<T> {
        if raw.len() != self.features.len() {
            return Err(Error::DimensionMismatch { expected: self.features.len(), got: raw.len() });
        }
        Ok(self.network.forward_unchecked(&self.normalization.apply(raw)))
    }

    /// Capacity in kN from a raw (unnormalized) feature row.
    pub fn predict_raw(&self, raw: &[T]) -> Result<T> {
        Ok(self.label_transform.inverse(self.forward_raw(raw)?))
    }

    pub fn feature_row(&self, s: &Specimen<T>) -> Vec<T> {
        FeatureRecord::new(s).select(&self.features)
    }

    /// Capacity in kN.
    pub fn predict(&self, s: &Specimen<T>) -> Result<T> {
        s.validate()?;
        self.predict_raw(&self.feature_row(s))
    }

    pub fn predict_many(&self, specimens: &[Specimen<T>]) -> Result<Vec<T>> {
        specimens.par_iter().map(|s| self.predict(s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format {}", self.format_version)));
        }
        self.network.validate()?;
        if self.network.sizes() != self.layer_sizes {
            return Err(Error::invalid("layer_sizes disagree with the stored weights"));
        }
        let m = self.features.len();
        if self.network.n_inputs() != m || self.normalization.mean.len() != m || self.normalization.std.len() != m {
            return Err(Error::NotFitted("normalization does not match the feature list".into()));
        }
        if self.normalization.std.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::NotFitted("normalization has non-positive scale".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl<T: Real> Predict<T> for Model<T> {
    fn n_features(&self) -> usize {
        self.features.len()
    }

    fn predict(&self, x: &[T]) -> T {
        self.predict_raw(x).unwrap_or_else(|_| T::nan())
    }
}

/// Column indices of `monotone` within `features` (absent ones skipped).
pub fn monotone_indices(features: &[FeatureName], monotone: &[FeatureName]) -> Vec<usize> {
    features.iter().enumerate().filter(|(_, f)| monotone.contains(f)).map(|(i, _)| i).collect()
}

/// Fraction of dominated specimen pairs (over `monotone`) whose predictions
/// are out of order; `None` when there is no dominated pair.
pub fn violation_rate<T: Real>(model: &Model<T>, specimens: &[Specimen<T>], monotone: &[FeatureName]) -> Result<Option<f64>> {
    let rows: Vec<Vec<T>> = specimens.iter().map(|s| model.feature_row(s)).collect();
    let pairs = dominance_pairs(&rows, &monotone_indices(&model.features, monotone));
    if pairs.is_empty() {
        return Ok(None);
    }
    let pred = model.predict_many(specimens)?;
    let bad = pairs.iter().filter(|&&(a, b)| pred[a] > pred[b]).count();
    Ok(Some(bad as f64 / pairs.len() as f64))
}
