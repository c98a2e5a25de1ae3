use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ga::{ga_invert, thickness_ratio, FixedGenes, GaConfig};
use crate::data::Specimen;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::seed;
use crate::shapley::{exact, FnModel};

/// Players of the design game, in order.
pub const PLAYERS: [&str; 5] = ["fc", "alpha_sc", "D", "L", "fy"];

/// Fraction of the target a GA solution may miss by before its cell is
/// flagged.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub fc_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Target capacity in kN; `None` uses the median label of the data.
    pub target_kn: Option<f64>,
    pub background_size: usize,
    pub tolerance: f64,
    pub ga: GaConfig,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            fc_grid: (1..=20).map(|i| 10.0 * i as f64).collect(),
            alpha_grid: (0..24).map(|i| ((4 + 2 * i) as f64) / 100.0).collect(),
            target_kn: None,
            background_size: 32,
            tolerance: DEFAULT_TOLERANCE,
            ga: GaConfig::default(),
            seed: 0,
        }
    }
}

/// One GA-engineered design at a grid point, with attributions of the
/// capacity to concrete strength and steel ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DependenceSample<T> {
    pub fc: f64,
    pub alpha_sc: f64,
    pub specimen: Option<Specimen<T>>,
    pub pred_kn: Option<f64>,
    pub fitness: Option<f64>,
    pub shap_fc: Option<f64>,
    pub shap_alpha: Option<f64>,
    /// Why the cell is unusable, if it is.
    pub flag: Option<String>,
}

fn from_players<T: Real>(p: &[T]) -> Result<Specimen<T>> {
    let (fc, alpha, d, l, fy) = (p[0], p[1], p[2], p[3], p[4]);
    let t = T::lit(thickness_ratio(alpha.as_f64())) * d;
    Specimen::new(d, t, l, fy, fc, T::one(), "grid")
}

fn to_players<T: Real>(s: &Specimen<T>) -> Vec<T> {
    vec![s.fc, s.alpha_sc(), s.d, s.l, s.fy]
}

/// `k` specimens drawn without replacement (all of them if fewer).
pub fn background_sample<T: Real>(specimens: &[Specimen<T>], k: usize, seed: u64) -> Vec<Specimen<T>> {
    let mut idx: Vec<usize> = (0..specimens.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx.truncate(k);
    idx.sort_unstable();
    idx.into_iter().map(|i| specimens[i].clone()).collect()
}

/// Engineers a design reaching `target` at every `(fc, α)` grid point and
/// attributes its capacity over the players `fc, α, D, L, fy` (thickness
/// follows from α and D) against `background`. Cells run in parallel with
/// seeds derived from `config.seed`; the output is fc-major.
pub fn build_dependence_grid<T: Real, F>(
    capacity: &F,
    target: f64,
    background: &[Specimen<T>],
    config: &GridConfig,
) -> Result<Vec<DependenceSample<T>>>
where
    F: Fn(&Specimen<T>) -> Result<T> + Sync,
{
    config.ga.validate()?;
    if config.fc_grid.is_empty() || config.alpha_grid.is_empty() {
        return Err(Error::invalid("dependence grid needs at least one fc and one alpha_sc value"));
    }
    if background.is_empty() {
        return Err(Error::invalid("dependence grid needs a background sample"));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let bg: Vec<Vec<T>> = background.iter().map(to_players).collect();
    let game = FnModel {
        n_features: PLAYERS.len(),
        f: |p: &[T]| from_players(p).and_then(|s| capacity(&s)).unwrap_or(T::nan()),
    };
    let cells: Vec<(usize, f64, f64)> = config
        .fc_grid
        .iter()
        .flat_map(|&fc| config.alpha_grid.iter().map(move |&a| (fc, a)))
        .enumerate()
        .map(|(i, (fc, a))| (i, fc, a))
        .collect();
    cells
        .par_iter()
        .map(|&(i, fc, alpha)| {
            let empty = |flag: String| DependenceSample {
                fc,
                alpha_sc: alpha,
                specimen: None,
                pred_kn: None,
                fitness: None,
                shap_fc: None,
                shap_alpha: None,
                flag: Some(flag),
            };
            let fixed = FixedGenes { fc: Some(fc), alpha_sc: Some(alpha), ..Default::default() };
            let ga = GaConfig { seed: seed::derive(config.seed, i as u64), ..config.ga.clone() };
            let r = match ga_invert(capacity, target, &fixed, &ga) {
                Ok(r) => r,
                Err(e @ (Error::InvalidArgument(_) | Error::Numeric(_))) => return Ok(empty(e.to_string())),
                Err(e) => return Err(e),
            };
            let attr = exact(&game, &to_players(&r.specimen), &bg)?;
            let (shap_fc, shap_alpha) = (attr.phi[0].as_f64(), attr.phi[1].as_f64());
            let flag = if r.fitness > config.tolerance * target {
                Some(format!("target missed by {:.3} kN", r.fitness))
            } else if !(shap_fc.is_finite() && shap_alpha.is_finite()) {
                Some("non-finite attribution".to_string())
            } else {
                None
            };
            Ok(DependenceSample {
                fc,
                alpha_sc: alpha,
                pred_kn: Some(r.prediction),
                fitness: Some(r.fitness),
                specimen: Some(r.specimen),
                shap_fc: Some(shap_fc),
                shap_alpha: Some(shap_alpha),
                flag,
            })
        })
        .collect()
}

/// Optimal steel ratio for one concrete strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRow {
    pub fc: f64,
    /// `None` when fewer than the required number of cells are usable.
    pub alpha_sc: Option<f64>,
    pub shap_alpha: Option<f64>,
    pub n_valid: usize,
}

/// For every fc, the α whose attribution to α is largest among unflagged
/// cells; ties go to the smaller α.
pub fn optimal_alpha_curve<T>(samples: &[DependenceSample<T>], min_valid: usize) -> Vec<GuidanceRow> {
    let mut fcs: Vec<f64> = samples.iter().map(|s| s.fc).collect();
    fcs.sort_by(f64::total_cmp);
    fcs.dedup();
    fcs.into_iter()
        .map(|fc| {
            let mut valid: Vec<(f64, f64)> = samples
                .iter()
                .filter(|s| s.fc == fc && s.flag.is_none())
                .filter_map(|s| s.shap_alpha.map(|v| (s.alpha_sc, v)))
                .collect();
            valid.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n_valid = valid.len();
            let best = (n_valid >= min_valid.max(1))
                .then(|| valid.iter().copied().reduce(|best, c| if c.1 > best.1 { c } else { best }))
                .flatten();
            GuidanceRow { fc, alpha_sc: best.map(|b| b.0), shap_alpha: best.map(|b| b.1), n_valid }
        })
        .collect()
}

pub fn write_dependence_csv<T: Real, W: Write>(writer: W, samples: &[DependenceSample<T>]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fc_MPa", "alpha_sc", "D_mm", "t_mm", "L_mm", "fy_MPa", "pred_kN", "shap_fc", "shap_alpha", "flag"])?;
    for s in samples {
        let geo = s.specimen.as_ref().map_or([const { String::new() }; 4], |p| {
            [p.d, p.t, p.l, p.fy].map(|v| v.as_f64().to_string())
        });
        let mut rec = vec![s.fc.to_string(), s.alpha_sc.to_string()];
        rec.extend(geo);
        rec.extend([opt(s.pred_kn), opt(s.shap_fc), opt(s.shap_alpha), s.flag.clone().unwrap_or_default()]);
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<dependence writer>", e))
}

/// Two-row table: concrete strengths, then their optimal steel ratios.
pub fn write_guidance_csv<W: Write>(writer: W, rows: &[GuidanceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let mut fc = vec!["fc_MPa".to_string()];
    fc.extend(rows.iter().map(|r| r.fc.to_string()));
    let mut alpha = vec!["alpha_sc".to_string()];
    alpha.extend(rows.iter().map(|r| r.alpha_sc.map_or(String::new(), |a| a.to_string())));
    w.write_record(fc)?;
    w.write_record(alpha)?;
    w.flush().map_err(|e| Error::io("<guidance writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{han_capacity_kn, FckConvention};
    use crate::data::generate_synthetic;

    fn han(s: &Specimen<f64>) -> Result<f64> {
        Ok(han_capacity_kn(s, FckConvention::Cylinder))
    }

    fn sample(fc: f64, alpha: f64, shap_alpha: f64, flag: Option<&str>) -> DependenceSample<f64> {
        DependenceSample {
            fc,
            alpha_sc: alpha,
            specimen: None,
            pred_kn: Some(1.0),
            fitness: Some(0.0),
            shap_fc: Some(0.0),
            shap_alpha: Some(shap_alpha),
            flag: flag.map(str::to_string),
        }
    }

    #[test]
    fn default_grid_shape() {
        let c = GridConfig::default();
        assert_eq!(c.fc_grid.len() * c.alpha_grid.len(), 480);
        assert_eq!(c.fc_grid[19], 200.0);
        assert!((c.alpha_grid[23] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_realizes_alpha_and_is_reproducible() {
        let data = generate_synthetic::<f64>(100, 2, 0.0).unwrap();
        let bg = background_sample(&data.specimens, 8, 1);
        let config = GridConfig {
            fc_grid: vec![30.0, 60.0],
            alpha_grid: vec![0.06, 0.1, 0.2],
            ga: GaConfig { generations: 30, bounds: GaConfig::bounds_from(&data.specimens).unwrap(), ..Default::default() },
            ..Default::default()
        };
        let target = 2000.0;
        let a = build_dependence_grid(&han, target, &bg, &config).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!((a[3].fc, a[3].alpha_sc), (60.0, 0.06));
        for s in &a {
            if let Some(sp) = &s.specimen {
                assert!((sp.alpha_sc() - s.alpha_sc).abs() < 1e-6);
                assert_eq!(sp.fc, s.fc);
            }
        }
        assert_eq!(a, build_dependence_grid(&han, target, &bg, &config).unwrap());
    }

    #[test]
    fn single_cell_and_out_of_bounds_flag() {
        let data = generate_synthetic::<f64>(50, 3, 0.0).unwrap();
        let bounds = GaConfig::bounds_from(&data.specimens).unwrap();
        let config = GridConfig {
            fc_grid: vec![bounds[4].1 + 50.0],
            alpha_grid: vec![0.1],
            ga: GaConfig { generations: 5, bounds, ..Default::default() },
            ..Default::default()
        };
        let out = build_dependence_grid(&han, 1000.0, &data.specimens[..4], &config).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].flag.is_some() && out[0].specimen.is_none());
    }

    #[test]
    fn null_player_gets_zero_attribution() {
        // capacity independent of fc
        let f = |s: &Specimen<f64>| Ok(s.alpha_sc() * s.d * 10.0);
        let data = generate_synthetic::<f64>(60, 4, 0.0).unwrap();
        let config = GridConfig {
            fc_grid: vec![40.0],
            alpha_grid: vec![0.1, 0.2],
            ga: GaConfig { generations: 10, bounds: GaConfig::bounds_from(&data.specimens).unwrap(), ..Default::default() },
            tolerance: 10.0,
            ..Default::default()
        };
        let out = build_dependence_grid(&f, 50.0, &data.specimens[..6], &config).unwrap();
        for s in out {
            assert!(s.shap_fc.unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_of_planted_surface() {
        // shap_alpha = −(α − α*(fc))² with α* falling in fc
        let star = |fc: f64| 0.30 - 0.001 * fc;
        let alphas: Vec<f64> = (0..24).map(|i| 0.04 + 0.02 * i as f64).collect();
        let mut samples = Vec::new();
        for fc in [20.0, 60.0, 100.0, 140.0] {
            for &a in &alphas {
                samples.push(sample(fc, a, -(a - star(fc)).powi(2), None));
            }
        }
        let curve = optimal_alpha_curve(&samples, 3);
        for r in &curve {
            let a = r.alpha_sc.unwrap();
            assert!((a - star(r.fc)).abs() <= 0.01 + 1e-12, "fc {}: {a}", r.fc);
            assert_eq!(r.n_valid, 24);
        }
        assert!(curve.windows(2).all(|w| w[1].alpha_sc <= w[0].alpha_sc));
    }

    #[test]
    fn ties_flags_and_sparse_columns() {
        let samples = vec![
            sample(40.0, 0.3, 1.0, None),
            sample(40.0, 0.1, 1.0, None),
            sample(40.0, 0.2, 0.5, None),
            sample(40.0, 0.4, 9.0, Some("target missed")),
            sample(80.0, 0.1, 1.0, None),
            sample(80.0, 0.2, 2.0, Some("x")),
        ];
        let curve = optimal_alpha_curve(&samples, 3);
        assert_eq!(curve[0].alpha_sc, Some(0.1));
        assert_eq!(curve[0].n_valid, 3);
        assert_eq!(curve[1].alpha_sc, None);
        assert_eq!(curve[1].n_valid, 1);
        let mut buf = Vec::new();
        write_guidance_csv(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "fc_MPa,40,80\nalpha_sc,0.1,\n");
    }
}
