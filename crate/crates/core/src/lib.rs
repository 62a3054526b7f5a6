//! Ranking-guided semi-supervised domain adaptation for ordinal severity
//! classification.
//!
//! A shared feature extractor feeds a classifier and a scalar rank score.
//! Source pretraining learns the rank score from pairwise class order; the
//! adaptation stage ranks pairs across domains and pulls every sample's rank
//! score toward per-class source prototypes, weighting unlabeled target
//! samples by mixture-model soft labels.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod trainer;

pub use checkpoint::{Checkpoint, TrainingStage};
pub use data::{DatasetBundle, Domain, Sample, Split, SynthConfig};
pub use error::{Error, Result};
pub use model::{forward, init_model, ForwardOutput, ModelConfig, ModelParams};
pub use trainer::{adapt, pretrain, Prototypes, TrainConfig, TrainReport};
