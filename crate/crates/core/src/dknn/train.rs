use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{dominance_pairs, loss_supervised, loss_total, subsample_pairs, Batch, ConstraintSpec};
use super::model::{monotone_indices, Activation, InputTransform, Model, Normalization, MODEL_FORMAT_VERSION};
use super::network::Network;
use crate::data::{Dataset, LabelTransform, Specimen};
use crate::error::{Error, Result};
use crate::features::{FeatureName, FeatureRecord};
use crate::num::Real;
use crate::seed;

pub const MAX_HIDDEN_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub label_transform: LabelTransform,
    pub input_transform: InputTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 50,
            seed: 0,
            hidden_layers: 5,
            hidden_width: 32,
            label_transform: LabelTransform::Log,
            input_transform: InputTransform::Log,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.hidden_width == 0 {
            return Err(Error::Config("epochs, batch_size, patience and hidden_width must be positive".into()));
        }
        if !(1..=MAX_HIDDEN_LAYERS).contains(&self.hidden_layers) {
            return Err(Error::Config(format!("hidden_layers = {} not in 1..={MAX_HIDDEN_LAYERS}", self.hidden_layers)));
        }
        if self.batch_size > n_train {
            return Err(Error::Config(format!("batch_size {} exceeds {n_train} training rows", self.batch_size)));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && unit(self.beta1) && unit(self.beta2) && self.epsilon > 0.0) {
            return Err(Error::Config("optimizer settings must be positive, decay rates below 1".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, n_inputs: usize) -> Vec<usize> {
        let mut s = vec![n_inputs];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(1);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_supervised: f64,
    pub loss_approx: f64,
    pub loss_monotone: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "loss_supervised", "loss_approx", "loss_monotone", "val_loss"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.loss_supervised.to_string(),
                r.loss_approx.to_string(),
                r.loss_monotone.to_string(),
                r.val_loss.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history writer>", e))
    }
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: Model<T>,
    pub history: History,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    lr: T,
    b1: T,
    b2: T,
    eps: T,
}

impl<T: Real> Adam<T> {
    fn new(n: usize, c: &TrainConfig) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            lr: T::lit(c.learning_rate),
            b1: T::lit(c.beta1),
            b2: T::lit(c.beta2),
            eps: T::lit(c.epsilon),
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.b1.powi(self.t);
        let c2 = one - self.b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.b1 * self.m[i] + (one - self.b1) * grad[i];
            self.v[i] = self.b2 * self.v[i] + (one - self.b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Prepared rows of one split.
struct Prepared<T> {
    x: Vec<Vec<T>>,
    y: Vec<T>,
    bounds: Option<(Vec<T>, Vec<T>)>,
}

fn prepare<T: Real>(
    specimens: &[Specimen<T>],
    features: &[FeatureName],
    norm: &Normalization<T>,
    spec: &ConstraintSpec,
    transform: LabelTransform,
) -> Result<Prepared<T>> {
    let mut x = Vec::with_capacity(specimens.len());
    let mut y = Vec::with_capacity(specimens.len());
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for s in specimens {
        let rec = FeatureRecord::new(s);
        x.push(norm.apply(&rec.select(features)));
        y.push(transform.forward(s.n)?);
        if let Some((kl, ku)) = spec.bounds {
            let nu0 = rec.get(FeatureName::Nu0);
            lo.push(transform.forward(T::lit(kl) * nu0)?);
            hi.push(transform.forward(T::lit(ku) * nu0)?);
        }
    }
    let bounds = spec.bounds.map(|_| (lo, hi));
    Ok(Prepared { x, y, bounds })
}

/// Trains on the dataset's own train/validation split.
pub fn train<T: Real>(
    dataset: &Dataset<T>,
    features: &[FeatureName],
    spec: &ConstraintSpec,
    config: &TrainConfig,
) -> Result<Trained<T>> {
    let split = dataset.split()?;
    train_split(&dataset.subset(&split.train), &dataset.subset(&split.validation), features, spec, config)
}

/// Minibatch Adam on the hybrid loss with early stopping on the validation
/// supervised loss; the best parameters are restored at the end.
pub fn train_split<T: Real>(
    train: &[Specimen<T>],
    validation: &[Specimen<T>],
    features: &[FeatureName],
    spec: &ConstraintSpec,
    config: &TrainConfig,
) -> Result<Trained<T>> {
    spec.validate()?;
    config.validate(train.len())?;
    if validation.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    if features.is_empty() {
        return Err(Error::invalid("no input features"));
    }
    let raw: Vec<Vec<T>> = train.iter().map(|s| FeatureRecord::new(s).select(features)).collect();
    let norm = Normalization::fit(&raw, config.input_transform)?;
    let tr = prepare(train, features, &norm, spec, config.label_transform)?;
    let va = prepare(validation, features, &norm, spec, config.label_transform)?;
    let monotone = monotone_indices(features, &spec.monotone_features);
    let gamma = T::lit(spec.gamma);

    let sizes = config.layer_sizes(features.len());
    let mut net = Network::<T>::init(&sizes, seed::derive_named(config.seed, "init"))?;
    // Start the output at the mean label so the rectified output is live.
    let out = net.layers.last_mut().unwrap();
    out.bias[0] = tr.y.iter().copied().sum::<T>() / T::from_usize_lossy(tr.y.len());

    let mut shuffle_rng = seed::rng(seed::derive_named(config.seed, "shuffle"));
    let mut pair_rng = seed::rng(seed::derive_named(config.seed, "pairs"));
    let mut params = net.params();
    let mut grad = vec![T::zero(); params.len()];
    let mut adam = Adam::new(params.len(), config);
    let mut order: Vec<usize> = (0..tr.x.len()).collect();
    let mut history = History::default();
    let mut best = (T::infinity(), params.clone(), 0usize);
    let mut wait = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 3];
        for chunk in order.chunks(config.batch_size) {
            let x: Vec<Vec<T>> = chunk.iter().map(|&i| tr.x[i].clone()).collect();
            let pairs = if gamma > T::zero() && !monotone.is_empty() {
                subsample_pairs(dominance_pairs(&x, &monotone), spec.pair_budget, &mut pair_rng)
            } else {
                Vec::new()
            };
            let batch = Batch {
                y: chunk.iter().map(|&i| tr.y[i]).collect(),
                bounds: tr.bounds.as_ref().map(|(lo, hi)| {
                    (chunk.iter().map(|&i| lo[i]).collect(), chunk.iter().map(|&i| hi[i]).collect())
                }),
                x,
                pairs,
            };
            let parts = loss_total(&net, &batch, gamma, Some(&mut grad))?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: loss = {} (supervised {}, approx {}, monotone {})",
                    parts.total, parts.supervised, parts.approx, parts.monotone
                )));
            }
            let w = chunk.len() as f64;
            sums[0] += w * parts.supervised.as_f64();
            sums[1] += w * parts.approx.as_f64();
            sums[2] += w * parts.monotone.as_f64();
            adam.step(&mut params, &grad);
            net.set_params(&params)?;
        }
        let val_pred: Vec<T> = va.x.iter().map(|x| net.forward_unchecked(x)).collect();
        let val = loss_supervised(&val_pred, &va.y)?;
        if !val.is_finite() {
            return Err(Error::Numeric(format!("validation loss not finite at epoch {epoch}")));
        }
        let n = tr.x.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            loss_supervised: sums[0] / n,
            loss_approx: sums[1] / n,
            loss_monotone: sums[2] / n,
            val_loss: val.as_f64(),
        });
        if val < best.0 {
            best = (val, params.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    net.set_params(&best.1)?;
    history.best_epoch = best.2;
    log::debug!(
        "trained {} epochs, best epoch {} (val loss {})",
        history.epochs.len(),
        history.best_epoch,
        best.0
    );

    let model = Model {
        format_version: MODEL_FORMAT_VERSION,
        layer_sizes: sizes,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Relu,
        network: net,
        normalization: norm,
        label_transform: config.label_transform,
        features: features.to_vec(),
        constraint: spec.clone(),
        train_config: config.clone(),
        seed: config.seed,
    };
    Ok(Trained { model, history })
}
