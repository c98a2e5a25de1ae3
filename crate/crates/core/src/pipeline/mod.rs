//! End-to-end stages behind the `cfst` binary. Every stage reads its inputs
//! from and writes its artifacts to one output directory, then records a
//! manifest with the config hash, the seeds it used and the SHA-256 of each
//! artifact. A failed stage leaves a `<stage>.failed` marker instead of a
//! manifest.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    DataConfig, EvaluateConfig, ExplainConfig, ModelsConfig, PipelineConfig, RobustnessConfig, ScreenConfig,
    SelectConfig, SensitivityConfig,
};

use crate::codes::{predict_all, predict_code, write_table, CodeId};
use crate::data::{generate_synthetic, load_csv, write_csv, Dataset, RangeMode, Specimen};
use crate::dknn::{train, violation_rate, Model, TrainConfig, Variant, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_metrics, interval_breakdown, robustness_sweep, sensitivity, write_metrics_csv, write_robustness_csv,
    write_sensitivity_csv, EvaluationReport, SliceMetrics,
};
use crate::explain::{
    build_dependence_grid, optimal_alpha_curve, shapley_explain_network, write_dependence_csv, write_guidance_csv,
    GaConfig,
};
use crate::features::{correlation_matrix, label_correlations, rank_by_score, select_features, FeatureFrame, FeatureName};
use crate::seed;
use crate::shapley::{shapley_importance, ShapleyMode};
use crate::tree::{detect_anomalies, fit_gradient_boosting, fit_random_forest, mdi_importance, ENSEMBLE_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Features,
    Select,
    Screen,
    Train,
    Codes,
    Evaluate,
    Robustness,
    Sensitivity,
    Explain,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 10] = [
        Stage::Synth,
        Stage::Features,
        Stage::Select,
        Stage::Screen,
        Stage::Train,
        Stage::Codes,
        Stage::Evaluate,
        Stage::Robustness,
        Stage::Sensitivity,
        Stage::Explain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Select => "select",
            Stage::Screen => "screen",
            Stage::Train => "train",
            Stage::Codes => "codes",
            Stage::Evaluate => "evaluate",
            Stage::Robustness => "robustness",
            Stage::Sensitivity => "sensitivity",
            Stage::Explain => "explain",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub stage: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifact_list: Vec<Artifact>,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn file_name(stage: &str) -> String {
        format!("manifest_{stage}.json")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("cfst-dknn".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("model_format".to_string(), MODEL_FORMAT_VERSION.to_string()),
        ("ensemble_format".to_string(), ENSEMBLE_FORMAT_VERSION.to_string()),
    ])
}

pub fn model_file(variant: Variant) -> String {
    format!("model_{variant}.json")
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    seeds: BTreeMap<String, u64>,
    artifacts: Vec<Artifact>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        Ctx { cfg, out: cfg.output_dir.clone(), seeds: BTreeMap::new(), artifacts: Vec::new() }
    }

    fn seed(&mut self, label: &str) -> u64 {
        let s = seed::derive_named(self.cfg.seed, label);
        self.seeds.insert(label.to_string(), s);
        s
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(Artifact { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn input(&self, name: &str, producer: Stage) -> Result<PathBuf> {
        let p = self.out.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Precondition(format!("{} is missing; run the `{producer}` stage first", p.display())))
        }
    }

    fn dataset(&mut self, name: &str, producer: Stage) -> Result<Dataset<f64>> {
        let path = self.input(name, producer)?;
        let mut ds = load_csv::<f64>(&path, RangeMode::Warn)?.dataset;
        ds.split_seed = self.seed("split");
        ds.split_fraction = self.cfg.data.split_fraction;
        Ok(ds)
    }

    fn selected(&self) -> Result<Vec<FeatureName>> {
        let path = self.input("selected.json", Stage::Select)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn model(&self, variant: Variant) -> Result<Model<f64>> {
        Model::load(self.input(&model_file(variant), Stage::Train)?)
    }

    fn train_config(&mut self) -> TrainConfig {
        TrainConfig { seed: self.seed("train"), ..self.cfg.train.clone() }
    }
}

fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn mape_pct(model: &Model<f64>, specimens: &[Specimen<f64>]) -> Result<f64> {
    let pred = model.predict_many(specimens)?;
    let truth: Vec<f64> = specimens.iter().map(|s| s.n).collect();
    Ok(compute_metrics(&truth, &pred, Default::default())?.mape)
}

fn synth(ctx: &mut Ctx) -> Result<()> {
    let dc = &ctx.cfg.data;
    let ds = match &dc.path {
        Some(p) => {
            let loaded = load_csv::<f64>(p, dc.range_mode)?;
            for w in &loaded.warnings {
                warn!("row {}: {}", w.row, w.violation);
            }
            loaded.dataset
        }
        None => {
            let (n, noise) = (dc.synthetic_n, dc.noise_cov);
            generate_synthetic(n, ctx.seed("synth"), noise)?
        }
    };
    info!("{} specimens", ds.len());
    ctx.write_with("data.csv", |b| write_csv(b, &ds.specimens))
}

fn features(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset("data.csv", Stage::Synth)?;
    let frame = FeatureFrame::full(&ds.specimens)?;
    ctx.write_with("features.csv", |b| frame.write_csv(b))?;
    let corr = correlation_matrix(&frame)?;
    ctx.write_with("correlations.csv", |b| corr.write_csv(b))
}

fn select(ctx: &mut Ctx) -> Result<()> {
    let sc = ctx.cfg.select.clone();
    let ds = ctx.dataset("data.csv", Stage::Synth)?;
    let frame = FeatureFrame::full(&ds.specimens)?;
    let names = frame.names().to_vec();

    let pcc = label_correlations(&frame);
    let forest = fit_random_forest(&frame, &sc.forest, ctx.seed("select.forest"))?;
    let mdi = mdi_importance(&forest)?;
    let boosted = fit_gradient_boosting(&frame, &sc.boosting, ctx.seed("select.boosting"))?;
    let rows = frame.rows();
    let explained: Vec<Vec<f64>> =
        sample_indices(rows.len(), sc.shap_rows, ctx.seed("select.rows")).into_iter().map(|i| rows[i].clone()).collect();
    let background: Vec<Vec<f64>> = sample_indices(rows.len(), sc.shap_background, ctx.seed("select.background"))
        .into_iter()
        .map(|i| rows[i].clone())
        .collect();
    let mode = ShapleyMode::Sampled { n_permutations: sc.shap_permutations };
    let shap = shapley_importance(&boosted, &explained, &background, mode, ctx.seed("select.shap"))?.global;

    let scored = |v: &[f64]| names.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let pcc_v: Vec<f64> = pcc.iter().map(|p| p.1).collect();
    let selected = select_features(
        &rank_by_score(&pcc),
        &rank_by_score(&scored(&shap)),
        &rank_by_score(&scored(&mdi)),
        sc.k,
        sc.mode,
    )?;
    info!("selected {:?}", selected.iter().map(|f| f.as_str()).collect::<Vec<_>>());
    ctx.write_with("importance.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["feature", "pcc_abs", "shap_mean_abs", "mdi", "selected"])?;
        for (i, n) in names.iter().enumerate() {
            let sel = selected.contains(n).to_string();
            w.write_record([n.as_str().to_string(), pcc_v[i].to_string(), shap[i].to_string(), mdi[i].to_string(), sel])?;
        }
        w.flush().map_err(|e| Error::io("importance.csv", e))
    })?;
    ctx.write("selected.json", serde_json::to_string_pretty(&selected)?.as_bytes())
}

fn screen(ctx: &mut Ctx) -> Result<()> {
    let sc = ctx.cfg.screen.clone();
    let ds = ctx.dataset("data.csv", Stage::Synth)?;
    let frame = FeatureFrame::full(&ds.specimens)?;
    let report = detect_anomalies(&frame, sc.contamination, &sc.isolation, ctx.seed("screen"))?;
    info!("{} of {} rows flagged", report.flagged.len(), ds.len());
    ctx.write_with("anomalies.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["row", "source_id", "score", "flagged"])?;
        for (i, s) in ds.specimens.iter().enumerate() {
            let flagged = report.flagged.contains(&i).to_string();
            w.write_record([i.to_string(), s.source_id.clone(), report.scores[i].to_string(), flagged])?;
        }
        w.flush().map_err(|e| Error::io("anomalies.csv", e))
    })?;
    let kept: Vec<Specimen<f64>> = ds
        .specimens
        .iter()
        .enumerate()
        .filter(|(i, _)| !(sc.drop_flagged && report.flagged.contains(i)))
        .map(|(_, s)| s.clone())
        .collect();
    ctx.write_with("clean.csv", |b| write_csv(b, &kept))
}

fn train_stage(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let features = ctx.selected()?;
    let tc = ctx.train_config();
    let split = ds.split()?;
    let validation = ds.subset(&split.validation);
    let mut summary = Vec::new();
    for &variant in &ctx.cfg.models.variants.clone() {
        let spec = variant.constraint(&ctx.cfg.constraint);
        let trained = train(&ds, &features, &spec, &tc)?;
        let mape = mape_pct(&trained.model, &validation)?;
        let vr = violation_rate(&trained.model, &validation, &ctx.cfg.constraint.monotone_features)?;
        info!("{variant}: validation MAPE {mape:.3}%");
        ctx.write(&model_file(variant), trained.model.to_json()?.as_bytes())?;
        ctx.write_with(&format!("history_{variant}.csv"), |b| trained.history.write_csv(b))?;
        summary.push((variant, mape, vr, trained.history.best_epoch, trained.history.epochs.len()));
    }
    let mut order: Vec<_> = summary.iter().map(|s| (s.1, s.0)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    info!("validation MAPE ordering: {}", order.iter().map(|o| o.1.as_str()).collect::<Vec<_>>().join(" < "));
    ctx.write_with("train_summary.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["variant", "validation_mape", "violation_rate", "best_epoch", "epochs_run", "mape_rank"])?;
        for s in &summary {
            let rank = order.iter().position(|o| o.1 == s.0).unwrap() + 1;
            w.write_record([
                s.0.as_str().to_string(),
                s.1.to_string(),
                s.2.map_or(String::new(), |v| v.to_string()),
                s.3.to_string(),
                s.4.to_string(),
                rank.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("train_summary.csv", e))
    })
}

fn codes(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let cells = predict_all(&ds.specimens, &ctx.cfg.codes)?;
    ctx.write_with("codes.csv", |b| write_table(b, &cells))
}

fn evaluate(ctx: &mut Ctx) -> Result<()> {
    let ec = ctx.cfg.evaluate.clone();
    let primary = ctx.cfg.models.primary;
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let split = ds.split()?;
    let slices = [("train", ds.subset(&split.train)), ("validation", ds.subset(&split.validation))];
    let mut variants = ctx.cfg.models.variants.clone();
    if !variants.contains(&primary) {
        variants.push(primary);
    }
    let mut rows = Vec::new();
    let mut breakdown = None;
    for variant in variants {
        let model = ctx.model(variant)?;
        for (name, specimens) in &slices {
            let pred = model.predict_many(specimens)?;
            let truth: Vec<f64> = specimens.iter().map(|s| s.n).collect();
            let metrics = compute_metrics(&truth, &pred, ec.metrics)?;
            rows.push(SliceMetrics { model: variant.to_string(), slice: name.to_string(), metrics });
            if variant == primary && *name == "validation" {
                breakdown = Some(interval_breakdown(specimens, &pred, &ec.bounds, ec.metrics)?);
            }
        }
    }
    let validation = &slices[1].1;
    for code in CodeId::ALL {
        let (mut truth, mut pred) = (Vec::new(), Vec::new());
        for s in validation {
            if let Ok(p) = predict_code(code, s, &ctx.cfg.codes) {
                truth.push(s.n);
                pred.push(p.capacity);
            }
        }
        if truth.len() < validation.len() {
            warn!("{code}: {} of {} specimens outside the formula domain", validation.len() - truth.len(), validation.len());
        }
        if !truth.is_empty() {
            let metrics = compute_metrics(&truth, &pred, ec.metrics)?;
            rows.push(SliceMetrics { model: code.to_string(), slice: "validation".into(), metrics });
        }
    }
    ctx.write_with("metrics.csv", |b| write_metrics_csv(b, &rows))?;
    if let Some(bd) = &breakdown {
        ctx.write_with("breakdown.csv", |b| bd.write_csv(b))?;
    }
    let report = EvaluationReport { metrics: rows, breakdown };
    ctx.write("evaluation.json", serde_json::to_string_pretty(&report)?.as_bytes())
}

fn robustness(ctx: &mut Ctx) -> Result<()> {
    let rc = ctx.cfg.robustness.clone();
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let features = ctx.selected()?;
    let mut tc = ctx.train_config();
    if let Some(e) = rc.epochs {
        tc.epochs = e;
    }
    let seed = ctx.seed("robustness");
    let cells = robustness_sweep(&ds, &features, &ctx.cfg.constraint, &rc.variants, &rc.sweep.levels(), &tc, seed)?;
    for c in cells.iter().filter(|c| c.error.is_some()) {
        warn!("{} at p = {}, d = {}: {}", c.variant, c.p, c.d, c.error.as_deref().unwrap_or_default());
    }
    ctx.write_with("robustness.csv", |b| write_robustness_csv(b, &cells))
}

fn sensitivity_stage(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let model = ctx.model(ctx.cfg.models.primary)?;
    let rows: Vec<Vec<f64>> = ds.specimens.iter().map(|s| model.feature_row(s)).collect();
    let values = sensitivity(&model, &rows, ctx.cfg.sensitivity.grid_points)?;
    ctx.write_with("sensitivity.csv", |b| write_sensitivity_csv(b, &model.features, &values))
}

fn explain(ctx: &mut Ctx) -> Result<()> {
    let xc = ctx.cfg.explain.clone();
    let ds = ctx.dataset("clean.csv", Stage::Screen)?;
    let model = ctx.model(ctx.cfg.models.primary)?;
    let split = ds.split()?;
    let train_set = ds.subset(&split.train);
    let validation = ds.subset(&split.validation);

    let explained: Vec<Specimen<f64>> = sample_indices(validation.len(), xc.shapley_rows, ctx.seed("explain.rows"))
        .into_iter()
        .map(|i| validation[i].clone())
        .collect();
    let background: Vec<Specimen<f64>> =
        sample_indices(train_set.len(), xc.grid.background_size, ctx.seed("explain.background"))
            .into_iter()
            .map(|i| train_set[i].clone())
            .collect();
    let imp = shapley_explain_network(&model, &explained, &background, xc.shapley_mode, ctx.seed("explain.shap"))?;
    ctx.write_with("shapley.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["feature", "mean_abs_shap_kN"])?;
        for (f, v) in model.features.iter().zip(&imp.global) {
            w.write_record([f.as_str().to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("shapley.csv", e))
    })?;

    let mut grid = xc.grid.clone();
    grid.seed = ctx.seed("explain.grid");
    grid.ga.bounds = GaConfig::bounds_from(&ds.specimens)?;
    // the fc gene must admit every grid column
    let fc = &mut grid.ga.bounds[4];
    for &v in &grid.fc_grid {
        *fc = (fc.0.min(v), fc.1.max(v));
    }
    let target = match grid.target_kn {
        Some(t) => t,
        None => {
            let mut y = ds.labels();
            y.sort_by(f64::total_cmp);
            let m = y.len() / 2;
            if y.len() % 2 == 1 { y[m] } else { 0.5 * (y[m - 1] + y[m]) }
        }
    };
    info!("dependence grid: {} cells, target {target:.1} kN", grid.fc_grid.len() * grid.alpha_grid.len());
    let samples = build_dependence_grid(&|s: &Specimen<f64>| model.predict(s), target, &background, &grid)?;
    let flagged = samples.iter().filter(|s| s.flag.is_some()).count();
    if flagged > 0 {
        warn!("{flagged} grid cells flagged");
    }
    ctx.write_with("dependence.csv", |b| write_dependence_csv(b, &samples))?;
    let curve = optimal_alpha_curve(&samples, xc.min_valid);
    ctx.write_with("guidance.csv", |b| write_guidance_csv(b, &curve))
}

fn dispatch(stage: Stage, ctx: &mut Ctx) -> Result<()> {
    match stage {
        Stage::Synth => synth(ctx),
        Stage::Features => features(ctx),
        Stage::Select => select(ctx),
        Stage::Screen => screen(ctx),
        Stage::Train => train_stage(ctx),
        Stage::Codes => codes(ctx),
        Stage::Evaluate => evaluate(ctx),
        Stage::Robustness => robustness(ctx),
        Stage::Sensitivity => sensitivity_stage(ctx),
        Stage::Explain => explain(ctx),
    }
}

fn prepare(cfg: &PipelineConfig, stage: &str) -> Result<()> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for stale in [Manifest::file_name(stage), format!("{stage}.failed")] {
        let p = out.join(stale);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

fn finish(cfg: &PipelineConfig, stage: &str, outcome: Result<Manifest>) -> Result<Manifest> {
    match outcome {
        Ok(m) => {
            let p = cfg.output_dir.join(Manifest::file_name(stage));
            std::fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&p, e))?;
            Ok(m)
        }
        Err(e) => {
            let p = cfg.output_dir.join(format!("{stage}.failed"));
            // best effort: the original error matters more
            let _ = std::fs::write(&p, format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_in(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
    let mut ctx = Ctx::new(cfg);
    dispatch(stage, &mut ctx)?;
    Ok(Manifest {
        config_hash: cfg.hash()?,
        master_seed: cfg.seed,
        stage: stage.to_string(),
        seeds: ctx.seeds,
        artifact_list: ctx.artifacts,
        versions: versions(),
    })
}

/// Runs one stage and writes its manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
    prepare(cfg, stage.as_str())?;
    info!("stage {stage}");
    finish(cfg, stage.as_str(), run_in(stage, cfg))
}

/// Runs every stage in dependency order; the combined manifest lists all
/// artifacts.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    prepare(cfg, "pipeline")?;
    let outcome = (|| {
        let mut all = Manifest {
            config_hash: cfg.hash()?,
            master_seed: cfg.seed,
            stage: "pipeline".into(),
            seeds: BTreeMap::new(),
            artifact_list: Vec::new(),
            versions: versions(),
        };
        for stage in Stage::ALL {
            let m = run_stage(stage, cfg)?;
            all.seeds.extend(m.seeds);
            all.artifact_list.extend(m.artifact_list);
        }
        Ok(all)
    })();
    finish(cfg, "pipeline", outcome)
}
