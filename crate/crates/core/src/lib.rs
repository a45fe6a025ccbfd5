//! Mass model editing for autoregressive language models.
//!
//! The toolkit fine-tunes a model on a batch of requested edits using
//! sentence concatenation with augmented random facts (plus the ablation
//! baselines: naive fine-tuning, random-fact augmentation, paraphrase-prefix
//! augmentation, and their combinations), then scores the post-edit model
//! with efficacy, generality, locality, the harmonic editing score, n-gram
//! entropy fluency, and TF-IDF consistency.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`factstore`] — edit requests, dataset loaders, augmentation pools,
//!   training-example assembly, and a deterministic synthetic fact world.
//! - [`lmcore`] — the language-model contract and a self-contained tiny
//!   decoder-only transformer with manual gradients.
//! - [`editkit`] — the mass-editing training loop with early stopping.
//! - [`evalsuite`] — the metric suite and per-run evaluation reports.
//! - [`runner`] — config files, run directories, and the
//!   edit → evaluate → report pipeline behind the CLI.
//!
//! All model math is generic over the scalar type via [`num::Real`];
//! the toolkit itself runs on [`Scalar`] (`f64`).

pub mod editkit;
pub mod evalsuite;
pub mod factstore;
pub mod lmcore;
pub mod num;
pub mod runner;

/// Scalar type used by the concrete toolkit.
pub type Scalar = f64;

/// The reference language model at the toolkit's scalar type.
pub type Model = lmcore::LanguageModel<Scalar>;

/// Optimizer state at the toolkit's scalar type.
pub type OptimizerState = lmcore::AdamWState<Scalar>;
