//! Axial capacity of circular concrete-filled steel tube columns.
//!
//! The numeric core is generic over [`num::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases. The CLI and the
//! [`pipeline`] run in `f64`.

pub mod codes;
pub mod data;
pub mod dknn;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod features;
pub mod num;
pub mod pipeline;
pub mod seed;
pub mod shapley;
pub mod tree;

pub use error::{Error, Result};
pub use num::Real;

pub type Specimen = data::Specimen<f64>;
pub type Specimen32 = data::Specimen<f32>;
pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type FeatureFrame = features::FeatureFrame<f64>;
pub type FeatureFrame32 = features::FeatureFrame<f32>;
pub type TreeEnsemble = tree::TreeEnsemble<f64>;
pub type TreeEnsemble32 = tree::TreeEnsemble<f32>;
pub type Network = dknn::Network<f64>;
pub type Network32 = dknn::Network<f32>;
pub type Model = dknn::Model<f64>;
pub type Model32 = dknn::Model<f32>;
pub type MetricsReport = evaluation::MetricsReport<f64>;
