use approx::assert_abs_diff_eq;

use cfst_dknn::data::generate_synthetic;
use cfst_dknn::dknn::{
    train, train_split, violation_rate, ConstraintSpec, Model, TrainConfig, Variant, MONOTONE_CANDIDATES,
};
use cfst_dknn::evaluation::{compute_metrics, robustness_sweep, MetricOptions, SweepAxis};
use cfst_dknn::features::FeatureName;

fn mape(model: &Model<f64>, specimens: &[cfst_dknn::data::Specimen<f64>]) -> f64 {
    let pred = model.predict_many(specimens).unwrap();
    let truth: Vec<f64> = specimens.iter().map(|s| s.n).collect();
    compute_metrics(&truth, &pred, MetricOptions::default()).unwrap().mape
}

#[test]
fn noiseless_fit_and_persistence() {
    let ds = generate_synthetic::<f64>(200, 7, 0.0).unwrap();
    let cfg = TrainConfig { seed: 7, epochs: 500, ..Default::default() };
    let t = train(&ds, &FeatureName::PUBLISHED_SELECTION, &ConstraintSpec::default(), &cfg).unwrap();
    let split = ds.split().unwrap();
    let train_rows = ds.subset(&split.train);
    let m = mape(&t.model, &train_rows);
    assert!(m < 5.0, "training MAPE {m}");

    let mut rel: Vec<f64> =
        train_rows.iter().map(|s| ((t.model.predict(s).unwrap() - s.n) / s.n).abs()).collect();
    rel.sort_by(f64::total_cmp);
    assert!(rel[rel.len() / 2] < 0.05);
    assert!(ds.specimens.iter().all(|s| t.model.predict(s).unwrap() > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    t.model.save(&path).unwrap();
    let back = Model::<f64>::load(&path).unwrap();
    for s in &ds.specimens {
        assert_abs_diff_eq!(t.model.predict(s).unwrap(), back.predict(s).unwrap(), epsilon = 1e-12);
    }

    let again = train(&ds, &FeatureName::PUBLISHED_SELECTION, &ConstraintSpec::default(), &cfg).unwrap();
    assert_eq!(t.model.network.params(), again.model.network.params());
    assert_eq!(t.history, again.history);
}

#[test]
fn history_records_every_epoch() {
    let ds = generate_synthetic::<f64>(120, 3, 0.05).unwrap();
    let cfg = TrainConfig { seed: 1, epochs: 40, patience: 1000, ..Default::default() };
    let t = train(&ds, &FeatureName::PUBLISHED_SELECTION, &ConstraintSpec::default(), &cfg).unwrap();
    assert_eq!(t.history.epochs.len(), 40);
    assert!(!t.history.stopped_early);
    assert!(t.history.epochs.iter().all(|e| e.loss_approx >= 0.0 && e.loss_monotone >= 0.0));
    let mut csv = Vec::new();
    t.history.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,loss_supervised,loss_approx,loss_monotone,val_loss\n"));
    assert_eq!(text.lines().count(), 41);
}

/// Violation rate non-increasing over γ ∈ {0, 0.1, 1}, majority over seeds.
#[test]
fn violation_rate_does_not_grow_with_gamma() {
    let mut holds = 0;
    for seed in 0..3u64 {
        let ds = generate_synthetic::<f64>(400, seed, 0.10).unwrap();
        let split = ds.split().unwrap();
        let validation = ds.subset(&split.validation);
        let rates: Vec<f64> = [0.0, 0.1, 1.0]
            .iter()
            .map(|&gamma| {
                let spec = ConstraintSpec { gamma, ..Default::default() };
                let cfg = TrainConfig { seed, epochs: 500, ..Default::default() };
                let t = train(&ds, &FeatureName::PUBLISHED_SELECTION, &spec, &cfg).unwrap();
                violation_rate(&t.model, &validation, &MONOTONE_CANDIDATES).unwrap().unwrap()
            })
            .collect();
        println!("seed {seed}: violation rates {rates:?}");
        if rates.windows(2).all(|w| w[1] <= w[0]) {
            holds += 1;
        }
    }
    assert!(holds >= 2, "ordering held for {holds} of 3 seeds");
}

#[test]
fn zero_perturbation_matches_clean_training() {
    let ds = generate_synthetic::<f64>(150, 9, 0.05).unwrap();
    let cfg = TrainConfig { seed: 2, epochs: 30, ..Default::default() };
    let base = ConstraintSpec::default();
    let features = FeatureName::PUBLISHED_SELECTION;
    let level = [(SweepAxis::P, 0.0, 0.2)];
    let cells = robustness_sweep(&ds, &features, &base, &[Variant::Annwt], &level, &cfg, 5).unwrap();
    let split = ds.split().unwrap();
    let (tr, va) = (ds.subset(&split.train), ds.subset(&split.validation));
    let clean = train_split(&tr, &va, &features, &Variant::Annwt.constraint(&base), &cfg).unwrap();
    assert_eq!(cells[0].mape, Some(mape(&clean.model, &va)));
}

#[test]
fn f32_training_runs() {
    let ds = generate_synthetic::<f32>(120, 4, 0.0).unwrap();
    let cfg = TrainConfig { seed: 4, epochs: 50, ..Default::default() };
    let t = train(&ds, &FeatureName::PUBLISHED_SELECTION, &ConstraintSpec::default(), &cfg).unwrap();
    assert!(ds.specimens.iter().all(|s| t.model.predict(s).unwrap().is_finite()));
}
