use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_enc_blocks: usize,
    pub n_dec_blocks: usize,
    /// Longest answer the decoder can emit, excluding the end marker.
    pub max_answer_len: usize,
    /// Longest encoder input (document, separator and question).
    pub max_input_len: usize,
    /// Standard deviation of the vocabulary projection at initialization;
    /// small values give near-uniform initial predictions.
    pub proj_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 69,
            d_model: 32,
            d_ff: 64,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            max_answer_len: 4,
            max_input_len: 64,
            proj_init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5
            || self.d_model == 0
            || self.d_ff == 0
            || self.n_enc_blocks == 0
            || self.n_dec_blocks == 0
            || self.max_answer_len == 0
            || self.max_input_len == 0
        {
            return Err(Error::invalid("model dimensions must be >= 1 and the vocabulary must hold the specials"));
        }
        Ok(())
    }

    /// Decoder positions: `BOS` plus up to `max_answer_len` answer tokens.
    pub fn decoder_len(&self) -> usize {
        self.max_answer_len + 1
    }
}
