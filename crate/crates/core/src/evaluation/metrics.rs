use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Specimen;
use crate::error::{Error, Result};
use crate::num::Real;

/// Accuracy of predicted against measured capacities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MetricsReport<T> {
    /// kN.
    pub rmse: T,
    /// Percent.
    pub mape: T,
    pub r2: T,
    /// Coefficient of variation of test-to-predicted ratios.
    pub cov: T,
    pub n: usize,
    /// Percent of predictions within 10 % of the target.
    pub within_10pct: T,
    pub within_20pct: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Divide absolute errors by the prediction instead of the target.
    pub predicted_denominator_mape: bool,
}

/// RMSE, MAPE, R² = 1 − SSres/SStot, CoV of `t/p`, and error bands on
/// `|t − p| / t`. R² is NaN when the targets are constant but the
/// predictions are not.
pub fn compute_metrics<T: Real>(targets: &[T], preds: &[T], options: MetricOptions) -> Result<MetricsReport<T>> {
    if targets.len() != preds.len() {
        return Err(Error::DimensionMismatch { expected: targets.len(), got: preds.len() });
    }
    if targets.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if let Some(t) = targets.iter().find(|&&t| !(t > T::zero())) {
        return Err(Error::invalid(format!("target {t} must be positive")));
    }
    if let Some(p) = preds.iter().find(|&&p| !(p > T::zero() && p.is_finite())) {
        return Err(Error::invalid(format!("prediction {p} must be positive and finite")));
    }
    let n = T::from_usize_lossy(targets.len());
    let hundred = T::lit(100.0);
    let pairs = || targets.iter().zip(preds).map(|(&t, &p)| (t, p));

    let ss_res: T = pairs().map(|(t, p)| (t - p) * (t - p)).sum();
    let rmse = (ss_res / n).sqrt();
    let mape = pairs()
        .map(|(t, p)| (t - p).abs() / if options.predicted_denominator_mape { p } else { t })
        .sum::<T>()
        / n
        * hundred;
    let t_mean = targets.iter().copied().sum::<T>() / n;
    let ss_tot: T = targets.iter().map(|&t| (t - t_mean) * (t - t_mean)).sum();
    let r2 = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else if ss_res == T::zero() {
        T::one()
    } else {
        T::nan()
    };
    let ratios: Vec<T> = pairs().map(|(t, p)| t / p).collect();
    let r_mean = ratios.iter().copied().sum::<T>() / n;
    let r_std = (ratios.iter().map(|&r| (r - r_mean) * (r - r_mean)).sum::<T>() / n).sqrt();
    let band = |limit: f64| {
        let k = pairs().filter(|&(t, p)| ((t - p).abs() / t).as_f64() <= limit + 1e-12).count();
        T::from_usize_lossy(k) / n * hundred
    };
    Ok(MetricsReport {
        rmse,
        mape,
        r2,
        cov: r_std / r_mean,
        n: targets.len(),
        within_10pct: band(0.10),
        within_20pct: band(0.20),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SteelClass {
    Nss,
    Hss,
    Uhss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConcreteClass {
    Nsc,
    Hsc,
    Uhsc,
}

impl SteelClass {
    pub const ALL: [SteelClass; 3] = [SteelClass::Nss, SteelClass::Hss, SteelClass::Uhss];

    pub fn as_str(self) -> &'static str {
        match self {
            SteelClass::Nss => "NSS",
            SteelClass::Hss => "HSS",
            SteelClass::Uhss => "UHSS",
        }
    }
}

impl ConcreteClass {
    pub const ALL: [ConcreteClass; 3] = [ConcreteClass::Nsc, ConcreteClass::Hsc, ConcreteClass::Uhsc];

    pub fn as_str(self) -> &'static str {
        match self {
            ConcreteClass::Nsc => "NSC",
            ConcreteClass::Hsc => "HSC",
            ConcreteClass::Uhsc => "UHSC",
        }
    }
}

/// Strength class boundaries in MPa: normal < first ≤ high < second ≤ ultra-high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassBounds {
    pub concrete: (f64, f64),
    pub steel: (f64, f64),
}

impl Default for ClassBounds {
    fn default() -> Self {
        ClassBounds { concrete: (50.0, 100.0), steel: (460.0, 700.0) }
    }
}

impl ClassBounds {
    pub fn steel_class(&self, fy: f64) -> SteelClass {
        if fy < self.steel.0 {
            SteelClass::Nss
        } else if fy < self.steel.1 {
            SteelClass::Hss
        } else {
            SteelClass::Uhss
        }
    }

    pub fn concrete_class(&self, fc: f64) -> ConcreteClass {
        if fc < self.concrete.0 {
            ConcreteClass::Nsc
        } else if fc < self.concrete.1 {
            ConcreteClass::Hsc
        } else {
            ConcreteClass::Uhsc
        }
    }
}

/// One class cell; `metrics` is `None` for an empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct StrengthCell<T> {
    pub steel: Option<SteelClass>,
    pub concrete: Option<ConcreteClass>,
    pub n: usize,
    pub metrics: Option<MetricsReport<T>>,
}

/// 3×3 grid (steel-major) plus steel marginals, concrete marginals and the
/// pooled total. Marginals are `None` on the pooled axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IntervalBreakdown<T> {
    pub cells: Vec<StrengthCell<T>>,
    pub steel_marginals: Vec<StrengthCell<T>>,
    pub concrete_marginals: Vec<StrengthCell<T>>,
    pub overall: StrengthCell<T>,
}

impl<T: Real> IntervalBreakdown<T> {
    pub fn cell(&self, steel: SteelClass, concrete: ConcreteClass) -> &StrengthCell<T> {
        self.cells.iter().find(|c| c.steel == Some(steel) && c.concrete == Some(concrete)).expect("full grid")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["steel", "concrete", "n", "rmse", "mape", "r2", "cov", "within_10pct", "within_20pct"])?;
        let all = self.cells.iter().chain(&self.steel_marginals).chain(&self.concrete_marginals).chain([&self.overall]);
        for c in all {
            let mut rec = vec![
                c.steel.map_or("ALL", |s| s.as_str()).to_string(),
                c.concrete.map_or("ALL", |s| s.as_str()).to_string(),
                c.n.to_string(),
            ];
            match &c.metrics {
                Some(m) => rec.extend([m.rmse, m.mape, m.r2, m.cov, m.within_10pct, m.within_20pct].map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n("empty".to_string(), 6)),
            }
            w.write_record(rec)?;
        }
        w.flush().map_err(|e| Error::io("<breakdown writer>", e))
    }
}

pub fn interval_breakdown<T: Real>(
    specimens: &[Specimen<T>],
    preds: &[T],
    bounds: &ClassBounds,
    options: MetricOptions,
) -> Result<IntervalBreakdown<T>> {
    if specimens.len() != preds.len() {
        return Err(Error::DimensionMismatch { expected: specimens.len(), got: preds.len() });
    }
    if specimens.is_empty() {
        return Err(Error::invalid("no specimens to break down"));
    }
    let classes: Vec<(SteelClass, ConcreteClass)> =
        specimens.iter().map(|s| (bounds.steel_class(s.fy.as_f64()), bounds.concrete_class(s.fc.as_f64()))).collect();
    let make = |steel: Option<SteelClass>, concrete: Option<ConcreteClass>| -> Result<StrengthCell<T>> {
        let idx: Vec<usize> = (0..specimens.len())
            .filter(|&i| steel.is_none_or(|s| classes[i].0 == s) && concrete.is_none_or(|c| classes[i].1 == c))
            .collect();
        let metrics = if idx.is_empty() {
            None
        } else {
            let t: Vec<T> = idx.iter().map(|&i| specimens[i].n).collect();
            let p: Vec<T> = idx.iter().map(|&i| preds[i]).collect();
            Some(compute_metrics(&t, &p, options)?)
        };
        Ok(StrengthCell { steel, concrete, n: idx.len(), metrics })
    };
    let mut cells = Vec::with_capacity(9);
    for s in SteelClass::ALL {
        for c in ConcreteClass::ALL {
            cells.push(make(Some(s), Some(c))?);
        }
    }
    Ok(IntervalBreakdown {
        cells,
        steel_marginals: SteelClass::ALL.iter().map(|&s| make(Some(s), None)).collect::<Result<_>>()?,
        concrete_marginals: ConcreteClass::ALL.iter().map(|&c| make(None, Some(c))).collect::<Result<_>>()?,
        overall: make(None, None)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const OPT: MetricOptions = MetricOptions { predicted_denominator_mape: false };

    #[test]
    fn perfect_fit() {
        let t = [100.0, 250.0, 300.0];
        let m = compute_metrics(&t, &t, OPT).unwrap();
        assert_eq!((m.rmse, m.mape, m.r2, m.cov), (0.0, 0.0, 1.0, 0.0));
        assert_eq!((m.within_10pct, m.within_20pct, m.n), (100.0, 100.0, 3));
    }

    #[test]
    fn hand_example() {
        let m = compute_metrics::<f64>(&[100.0, 200.0], &[110.0, 180.0], OPT).unwrap();
        assert!((m.mape - 10.0).abs() < 1e-12);
        assert!((m.rmse - 250.0_f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse - 15.811).abs() < 1e-3);
        assert_eq!(m.within_10pct, 100.0);
        // literal variant divides by the prediction: (10/110 + 20/180) / 2
        let lit = compute_metrics::<f64>(&[100.0, 200.0], &[110.0, 180.0], MetricOptions { predicted_denominator_mape: true }).unwrap();
        assert!((lit.mape - 50.0 * (10.0 / 110.0 + 20.0 / 180.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_mean_prediction_has_zero_r2() {
        let t = [1.0_f64, 2.0, 3.0, 6.0];
        let m = compute_metrics(&t, &[3.0; 4], OPT).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn scale_awareness() {
        let t = [120.0_f64, 340.0, 75.0, 990.0];
        let p = [130.0, 300.0, 80.0, 1000.0];
        let a = compute_metrics(&t, &p, OPT).unwrap();
        let c = 7.5_f64;
        let b = compute_metrics(&t.map(|v| v * c), &p.map(|v| v * c), OPT).unwrap();
        assert!((b.rmse - c * a.rmse).abs() < 1e-9);
        for (x, y) in [(a.mape, b.mape), (a.r2, b.r2), (a.cov, b.cov), (a.within_10pct, b.within_10pct)] {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(compute_metrics(&[0.0], &[1.0], OPT).is_err());
        assert!(compute_metrics::<f64>(&[], &[], OPT).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], OPT).is_err());
    }

    fn specimen(fy: f64, fc: f64, n: f64) -> Specimen<f64> {
        Specimen::new(200.0, 5.0, 600.0, fy, fc, n, "x").unwrap()
    }

    #[test]
    fn class_assignment() {
        let b = ClassBounds::default();
        assert_eq!((b.steel_class(500.0), b.concrete_class(120.0)), (SteelClass::Hss, ConcreteClass::Uhsc));
        assert_eq!((b.steel_class(460.0), b.concrete_class(50.0)), (SteelClass::Hss, ConcreteClass::Hsc));
        assert_eq!((b.steel_class(459.9), b.concrete_class(49.9)), (SteelClass::Nss, ConcreteClass::Nsc));
        assert_eq!(b.steel_class(700.0), SteelClass::Uhss);
    }

    #[test]
    fn breakdown_partitions_and_marginals_pool() {
        let specimens: Vec<_> = [(300.0, 30.0), (500.0, 120.0), (800.0, 60.0), (350.0, 40.0), (500.0, 70.0)]
            .iter()
            .enumerate()
            .map(|(i, &(fy, fc))| specimen(fy, fc, 1000.0 + 100.0 * i as f64))
            .collect();
        let preds = [1100.0, 1000.0, 1300.0, 1250.0, 1500.0];
        let b = interval_breakdown(&specimens, &preds, &ClassBounds::default(), OPT).unwrap();
        assert_eq!(b.cells.iter().map(|c| c.n).sum::<usize>(), 5);
        assert_eq!(b.cells.iter().filter(|c| c.metrics.is_none()).count(), 9 - 4);
        let nss = &b.steel_marginals[0];
        assert_eq!(nss.n, 2);
        let direct = compute_metrics(&[1000.0, 1300.0], &[1100.0, 1250.0], OPT).unwrap();
        assert_eq!(nss.metrics.unwrap(), direct);
        assert_eq!(b.cell(SteelClass::Hss, ConcreteClass::Uhsc).n, 1);
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 9 + 3 + 3 + 1);
    }

    #[test]
    fn single_cell_marginals_equal_it() {
        let specimens: Vec<_> = (0..4).map(|i| specimen(300.0, 30.0, 900.0 + i as f64)).collect();
        let preds = [950.0, 880.0, 910.0, 905.0];
        let b = interval_breakdown(&specimens, &preds, &ClassBounds::default(), OPT).unwrap();
        let cell = b.cell(SteelClass::Nss, ConcreteClass::Nsc).metrics;
        assert_eq!(b.overall.metrics, cell);
        assert_eq!(b.steel_marginals[0].metrics, cell);
        assert_eq!(b.concrete_marginals[0].metrics, cell);
    }
}
