use std::io::Write;

use crate::error::{Error, Result};
use crate::features::FeatureName;
use crate::num::{linspace, Real};
use crate::shapley::Predict;

/// One-at-a-time range sensitivity in percent.
///
/// Feature `i` is swept over its observed `[min, max]` on `grid_points`
/// points with every other feature at its mean; its score is the output
/// range `f_max − f_min`, normalized so all scores sum to 100. Constant
/// features score 0; if every range is zero all scores are 0.
pub fn sensitivity<T: Real, M: Predict<T> + ?Sized>(model: &M, rows: &[Vec<T>], grid_points: usize) -> Result<Vec<T>> {
    let m = model.n_features();
    if rows.is_empty() {
        return Err(Error::invalid("sensitivity needs at least one row"));
    }
    if grid_points < 2 {
        return Err(Error::invalid("grid_points must be >= 2"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: r.len() });
    }
    let n = T::from_usize_lossy(rows.len());
    let means: Vec<T> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<T>() / n).collect();
    let ranges: Vec<T> = (0..m)
        .map(|j| {
            let lo = rows.iter().map(|r| r[j]).fold(T::infinity(), T::min);
            let hi = rows.iter().map(|r| r[j]).fold(T::neg_infinity(), T::max);
            if hi <= lo {
                return T::zero();
            }
            let mut x = means.clone();
            let (mut fmin, mut fmax) = (T::infinity(), T::neg_infinity());
            for v in linspace(lo, hi, grid_points) {
                x[j] = v;
                let f = model.predict(&x);
                fmin = fmin.min(f);
                fmax = fmax.max(f);
            }
            fmax - fmin
        })
        .collect();
    if let Some(r) = ranges.iter().find(|r| !r.is_finite()) {
        return Err(Error::Numeric(format!("model output range {r} is not finite")));
    }
    let total: T = ranges.iter().copied().sum();
    if total <= T::zero() {
        return Ok(vec![T::zero(); m]);
    }
    Ok(ranges.into_iter().map(|r| r / total * T::lit(100.0)).collect())
}

pub fn write_sensitivity_csv<T: Real, W: Write>(writer: W, names: &[FeatureName], values: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "sensitivity_pct"])?;
    for (n, v) in names.iter().zip(values) {
        w.write_record([n.as_str().to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<sensitivity writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::FnModel;

    fn grid_rows() -> Vec<Vec<f64>> {
        (0..=10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0, 0.5]).collect()
    }

    #[test]
    fn two_to_one_linear_model() {
        let model = FnModel { n_features: 3, f: |x: &[f64]| 2.0 * x[0] + x[1] };
        let s = sensitivity(&model, &grid_rows(), 11).unwrap();
        assert!((s[0] - 200.0 / 3.0).abs() < 1e-9);
        assert!((s[1] - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(s[2], 0.0);
        assert!((s.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn single_dependency() {
        let model = FnModel { n_features: 3, f: |x: &[f64]| (x[1] * 3.0).exp() };
        let s = sensitivity(&model, &grid_rows(), 5).unwrap();
        assert_eq!(s, vec![0.0, 100.0, 0.0]);
    }

    #[test]
    fn permutation_equivariance() {
        let model = FnModel { n_features: 3, f: |x: &[f64]| x[0] * x[0] + 0.5 * x[1] };
        let swapped = FnModel { n_features: 3, f: |x: &[f64]| x[1] * x[1] + 0.5 * x[0] };
        let rows = grid_rows();
        let rows_sw: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[1], r[0], r[2]]).collect();
        let a = sensitivity(&model, &rows, 21).unwrap();
        let b = sensitivity(&swapped, &rows_sw, 21).unwrap();
        assert!((a[0] - b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn constant_model_and_errors() {
        let model = FnModel { n_features: 3, f: |_: &[f64]| 4.0 };
        assert_eq!(sensitivity(&model, &grid_rows(), 5).unwrap(), vec![0.0; 3]);
        assert!(sensitivity(&model, &[], 5).is_err());
        assert!(sensitivity(&model, &grid_rows(), 1).is_err());
        assert!(sensitivity(&model, &[vec![1.0]], 5).is_err());
    }
}
