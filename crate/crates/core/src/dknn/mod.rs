//! Domain-knowledge-enhanced network: a rectifier MLP trained on the
//! supervised log-capacity error plus an approximate-band penalty around
//! the nominal strength and a pairwise monotonicity penalty.

mod loss;
mod model;
mod network;
mod train;

pub use loss::{
    dominance_pairs, dominates, loss_approx, loss_monotone, loss_supervised, loss_total, subsample_pairs, Batch,
    ConstraintSpec, LossParts, Variant, MONOTONE_CANDIDATES,
};
pub use model::{monotone_indices, violation_rate, Activation, InputTransform, Model, Normalization, MODEL_FORMAT_VERSION};
pub use network::{Layer, Network, Trace};
pub use train::{train, train_split, EpochRecord, History, TrainConfig, Trained, MAX_HIDDEN_LAYERS};
