//! Accuracy metrics, strength-class breakdowns, label-noise robustness
//! sweeps and one-at-a-time sensitivity.

mod metrics;
mod robustness;
mod sensitivity;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use metrics::{
    compute_metrics, interval_breakdown, ClassBounds, ConcreteClass, IntervalBreakdown, MetricOptions, MetricsReport,
    SteelClass, StrengthCell,
};
pub use robustness::{perturb_labels, robustness_sweep, write_robustness_csv, RobustnessCell, SweepAxis, SweepConfig};
pub use sensitivity::{sensitivity, write_sensitivity_csv};

use crate::error::{Error, Result};
use crate::num::Real;

/// Metrics of one model on one data slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SliceMetrics<T> {
    pub model: String,
    pub slice: String,
    pub metrics: MetricsReport<T>,
}

/// The JSON summary emitted by the `evaluate` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EvaluationReport<T> {
    pub metrics: Vec<SliceMetrics<T>>,
    pub breakdown: Option<IntervalBreakdown<T>>,
}

pub fn write_metrics_csv<T: Real, W: Write>(writer: W, rows: &[SliceMetrics<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "slice", "n", "rmse", "mape", "r2", "cov", "within_10pct", "within_20pct"])?;
    for r in rows {
        let m = &r.metrics;
        let mut rec = vec![r.model.clone(), r.slice.clone(), m.n.to_string()];
        rec.extend([m.rmse, m.mape, m.r2, m.cov, m.within_10pct, m.within_20pct].map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<metrics writer>", e))
}
