//! The autoregressive language-model contract and its reference
//! implementation: a tiny decoder-only transformer with hand-written
//! gradients, a word-level tokenizer, layer-grouped parameter selection,
//! low-rank adapters, an AdamW optimizer, and checkpoint I/O.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod select;
mod tensor;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::finite_difference_check;
pub use model::{group_of, Decoding, LanguageModel, ModelConfig};
pub use optim::{gradient_step, AdamWConfig, AdamWState};
pub use select::{
    install_adapters, trainable_names, trainable_parameters, AdapterSpec, LayerSelection,
    ParamGroup, SelectionMode,
};
pub use tensor::Tensor;
pub use vocab::{split_words, TokenSequence, Vocabulary, BOS_ID, EOS_ID, UNK_ID};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sequence of {needed} tokens exceeds context length {limit}")]
    ContextOverflow { needed: usize, limit: usize },
    #[error("invalid layer selection: {0}")]
    Selection(String),
    #[error("non-finite loss on example {example}: {message}")]
    Numeric { example: String, message: String },
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint is inconsistent: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, LmError>;
