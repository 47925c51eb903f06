//! The toy target: an encoder-decoder over document and question tokens,
//! with a named layer registry, LoRA adapters, greedy decoding and training.

mod config;
mod lora;
mod net;
mod params;
mod train;

pub use config::ModelConfig;
pub use net::{
    EncoderInput, Generation, LoraAdapter, Seq2Seq, Trainable, FINAL_PROJECTION, INPUT_VIEW, LORA_PREFIX,
};
pub use params::{Layer, ParameterSet};
pub use train::{train, train_with, Example, TrainConfig, TrainReport};
pub(crate) use train::accumulate;

use serde::{Deserialize, Serialize};

use crate::rng::Seed;

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<Seed>,
    pub steps: usize,
    pub corpus_hash: Option<alloc::string::String>,
    pub note: Option<alloc::string::String>,
}

/// A model plus training provenance; the unit persisted to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub model: Seq2Seq,
    pub provenance: Provenance,
}
