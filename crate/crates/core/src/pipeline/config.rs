use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codes::CodeOptions;
use crate::data::{RangeMode, DEFAULT_SPLIT_FRACTION};
use crate::dknn::{ConstraintSpec, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{ClassBounds, MetricOptions, SweepConfig};
use crate::explain::GridConfig;
use crate::features::SelectionMode;
use crate::shapley::ShapleyMode;
use crate::tree::{BoostingParams, ForestParams, IsolationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV to ingest; synthetic data is generated when absent.
    pub path: Option<PathBuf>,
    pub synthetic_n: usize,
    pub noise_cov: f64,
    pub range_mode: RangeMode,
    pub split_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            synthetic_n: 500,
            noise_cov: 0.05,
            range_mode: RangeMode::Warn,
            split_fraction: DEFAULT_SPLIT_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub mode: SelectionMode,
    pub k: usize,
    pub forest: ForestParams,
    pub boosting: BoostingParams,
    /// Rows explained for the boosted-tree Shapley ranking.
    pub shap_rows: usize,
    pub shap_background: usize,
    pub shap_permutations: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            mode: SelectionMode::Consensus,
            k: 10,
            forest: ForestParams::default(),
            boosting: BoostingParams::default(),
            shap_rows: 64,
            shap_background: 32,
            shap_permutations: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub contamination: f64,
    pub isolation: IsolationParams,
    /// Remove flagged rows from the training data.
    pub drop_flagged: bool,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig { contamination: 0.02, isolation: IsolationParams::default(), drop_flagged: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub variants: Vec<Variant>,
    /// Variant used by evaluate breakdowns, sensitivity and explain.
    pub primary: Variant,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig { variants: vec![Variant::Ann, Variant::Annwt], primary: Variant::Annwt }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub bounds: ClassBounds,
    pub metrics: MetricOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub sweep: SweepConfig,
    pub variants: Vec<Variant>,
    /// Overrides the training epoch budget for sweep cells.
    pub epochs: Option<usize>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig { sweep: SweepConfig::default(), variants: vec![Variant::Ann, Variant::Annwt], epochs: Some(300) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub grid_points: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { grid_points: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub shapley_mode: ShapleyMode,
    pub shapley_rows: usize,
    pub grid: GridConfig,
    /// Optimal-ratio columns need at least this many usable cells.
    pub min_valid: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { shapley_mode: ShapleyMode::Exact, shapley_rows: 50, grid: GridConfig::default(), min_valid: 3 }
    }
}

/// Everything one run needs. Stage seeds are derived from `seed`; the
/// `seed` fields nested in sub-configs are overwritten at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub select: SelectConfig,
    pub screen: ScreenConfig,
    pub constraint: ConstraintSpec,
    pub train: TrainConfig,
    pub models: ModelsConfig,
    pub codes: CodeOptions,
    pub evaluate: EvaluateConfig,
    pub robustness: RobustnessConfig,
    pub sensitivity: SensitivityConfig,
    pub explain: ExplainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            select: SelectConfig::default(),
            screen: ScreenConfig::default(),
            constraint: ConstraintSpec::default(),
            train: TrainConfig::default(),
            models: ModelsConfig::default(),
            codes: CodeOptions::default(),
            evaluate: EvaluateConfig::default(),
            robustness: RobustnessConfig::default(),
            sensitivity: SensitivityConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.data.path {
            if !p.is_file() {
                return Err(Error::Config(format!("data path {} does not exist", p.display())));
            }
        }
        if self.models.variants.is_empty() {
            return Err(Error::Config("models.variants is empty".into()));
        }
        self.constraint.validate()?;
        self.explain.grid.ga.validate()?;
        Ok(())
    }

    /// SHA-256 of the configuration, independent of where output goes.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let p = PipelineConfig::from_toml("seed = 7\n[train]\nepochs = 5\n[models]\nvariants = [\"ANN\"]\n").unwrap();
        assert_eq!((p.seed, p.train.epochs, p.train.batch_size), (7, 5, 64));
        assert_eq!(p.models.variants, vec![Variant::Ann]);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { output_dir: "elsewhere".into(), ..a.clone() };
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }
}
