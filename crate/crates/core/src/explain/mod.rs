//! Design-space explanation: GA inversion of a capacity model to a target,
//! Shapley dependence of capacity on concrete strength and steel ratio
//! over a grid, and the resulting optimal steel-ratio guidance.

mod dependence;
mod ga;

pub use dependence::{
    background_sample, build_dependence_grid, optimal_alpha_curve, write_dependence_csv, write_guidance_csv,
    DependenceSample, GridConfig, GuidanceRow, DEFAULT_TOLERANCE, PLAYERS,
};
pub use ga::{ga_invert, ga_invert_from, thickness_ratio, FixedGenes, GaConfig, GaResult, Genes};

use crate::data::Specimen;
use crate::dknn::Model;
use crate::error::Result;
use crate::num::Real;
use crate::shapley::{shapley_importance, ShapleyImportance, ShapleyMode};

/// Shapley importance of a trained network's input features for
/// `specimens` against `background`.
pub fn shapley_explain_network<T: Real>(
    model: &Model<T>,
    specimens: &[Specimen<T>],
    background: &[Specimen<T>],
    mode: ShapleyMode,
    seed: u64,
) -> Result<ShapleyImportance<T>> {
    let rows: Vec<Vec<T>> = specimens.iter().map(|s| model.feature_row(s)).collect();
    let bg: Vec<Vec<T>> = background.iter().map(|s| model.feature_row(s)).collect();
    shapley_importance(model, &rows, &bg, mode, seed)
}
