//! Minimal differentiable layer stack with hand-written reverse-mode
//! gradients: embedding lookup, LSTM cell, bidirectional wrapper, global
//! max pooling, fully-connected + sigmoid, binary cross entropy, RMSProp,
//! parameter freezing and checkpoint I/O.
//!
//! Everything is 64-bit floats so finite-difference gradient checks stay
//! tight at desk scale.

mod checkpoint;
mod layers;
mod optimizer;
mod store;
mod tensor;

pub use checkpoint::{
    checkpoint_to_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{
    bce_loss, bilstm_backward, bilstm_forward, embedding_backward, embedding_forward,
    fc_bce_backward, fc_sigmoid_forward, global_max_pool, gmp_backward, lstm_cell_forward,
    BiLstmCache, LstmGrads, LstmParams, Token, TokenBatch, BCE_EPS,
};
pub use optimizer::rmsprop_step;
pub use store::{GradMap, ParamStore};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the layer stack: event vocabulary, embedding width and
/// LSTM cells per direction. The output head is a single logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid_argument(
                "vocab_size, embed_dim and hidden_dim must all be >= 1",
            ));
        }
        Ok(())
    }
}
