//! The mass-editing training loop: method-specific example assembly, epochs
//! over the selected parameters with early stopping, and pre-training for
//! the reference model.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factstore::{
    build_training_examples, AugmentationPool, EditRequest, ExampleKind, FactStoreError, Method,
    ParaphrasePrefixSet, TrainingExample,
};
use crate::lmcore::{
    gradient_step, trainable_names, trainable_parameters, AdamWConfig, AdamWState, LanguageModel,
    LayerSelection, LmError, ModelConfig, Vocabulary,
};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("invalid editor configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Facts(#[from] FactStoreError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        source: LmError,
    },
}

pub type Result<T> = std::result::Result<T, EditError>;

/// Hyperparameters of one editing run. The defaults mirror the reference
/// profile: 40 epochs, early-stop patience 5, batch size 32, 20 augmented
/// facts per edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditorConfig {
    pub method: Method,
    pub selection: LayerSelection,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub n_random_facts: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            method: Method::SaulR,
            selection: LayerSelection::all(),
            epochs: 40,
            patience: 5,
            batch_size: 32,
            lr: 5e-5,
            n_random_facts: 20,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(EditError::Config("epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return Err(EditError::Config(format!(
                "patience {} must be in 1..={}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(EditError::Config("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(EditError::Config(format!("lr {} is not usable", self.lr)));
        }
        if self.n_random_facts == 0 && self.method.uses_random_facts() {
            return Err(EditError::Config(
                "n_random_facts must be positive for random-fact methods".into(),
            ));
        }
        Ok(())
    }
}

/// Record of one editing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRun {
    pub config: EditorConfig,
    pub pre_model_ref: Option<String>,
    pub post_model_ref: Option<String>,
    /// Mean training loss per epoch, one entry per epoch actually run.
    pub loss_history: Vec<f64>,
    pub stopped_epoch: usize,
    pub wall_time_per_edit: f64,
}

/// True exactly when the most recent `patience` epochs each failed to
/// improve (strictly, tolerance 0) on the best loss seen before them.
pub fn should_stop(loss_history: &[f64], patience: usize) -> bool {
    let mut best = f64::INFINITY;
    let mut trailing = 0usize;
    for &loss in loss_history {
        if loss < best {
            best = loss;
            trailing = 0;
        } else {
            trailing += 1;
        }
    }
    trailing >= patience
}

/// One catalog entry per supported editing method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub method: Method,
    pub description: &'static str,
    pub needs_pool: bool,
    pub needs_prefixes: bool,
}

/// The seven supported methods, matching the ablation grid.
pub fn method_catalog() -> Vec<MethodInfo> {
    Method::ALL
        .into_iter()
        .map(|method| MethodInfo {
            method,
            description: match method {
                Method::Ft => "naive fine-tuning on the requested edits",
                Method::FtR => "fine-tuning plus standalone random-fact examples",
                Method::FtP => "fine-tuning plus paraphrase-prefixed edit sentences",
                Method::FtPr => "fine-tuning plus both augmentations",
                Method::SaulR => {
                    "sentence concatenation with random true facts (the headline method)"
                }
                Method::SaulP => "sentence concatenation with paraphrase prefixes as suffixes",
                Method::SaulPr => "sentence concatenation with both suffix sources",
            },
            needs_pool: method.uses_random_facts(),
            needs_prefixes: method.uses_prefixes(),
        })
        .collect()
}

/// Trains all requested edits jointly and returns the post-edit model with
/// the run record. Deterministic in the config seed: the per-epoch example
/// order is shuffled with seed + epoch.
pub fn run_edit<F: Real>(
    mut model: LanguageModel<F>,
    edits: &[EditRequest],
    pool: Option<&AugmentationPool>,
    prefixes: Option<&ParaphrasePrefixSet>,
    config: &EditorConfig,
) -> Result<(LanguageModel<F>, EditRun)> {
    config.validate()?;
    if edits.is_empty() {
        return Err(EditError::Config("no edits requested".into()));
    }
    let examples = build_training_examples(edits, pool, prefixes, config.method)?;
    let groups = trainable_parameters(&mut model, &config.selection)?;
    let trainable = trainable_names(&groups);
    let mut optimizer = AdamWState::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });

    let started = Instant::now();
    let mut loss_history: Vec<f64> = Vec::new();
    for epoch in 1..=config.epochs {
        let epoch_loss = run_epoch(
            &mut model,
            &examples,
            &trainable,
            config,
            epoch,
            &mut optimizer,
        )?;
        loss_history.push(epoch_loss);
        if should_stop(&loss_history, config.patience) {
            break;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    let stopped_epoch = loss_history.len();
    Ok((
        model,
        EditRun {
            config: config.clone(),
            pre_model_ref: None,
            post_model_ref: None,
            loss_history,
            stopped_epoch,
            wall_time_per_edit: elapsed / edits.len() as f64,
        },
    ))
}

fn run_epoch<F: Real>(
    model: &mut LanguageModel<F>,
    examples: &[TrainingExample],
    trainable: &BTreeSet<String>,
    config: &EditorConfig,
    epoch: usize,
    optimizer: &mut AdamWState<F>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);

    let mut total = 0.0f64;
    for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch: Vec<TrainingExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
        let loss =
            gradient_step(model, &batch, trainable, config.lr, optimizer).map_err(|source| {
                EditError::Training {
                    epoch,
                    batch: batch_index,
                    source,
                }
            })?;
        total += loss.to_f64() * batch.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

// ---------------------------------------------------------------------------
// Pre-training for the reference model
// ---------------------------------------------------------------------------

/// Pre-training hyperparameters for the reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub arch: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            arch: ModelConfig::reference(),
            epochs: 60,
            batch_size: 32,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Trains a fresh model on full corpus sentences (with an end-of-text
/// marker appended) until the epoch budget is exhausted. The vocabulary
/// covers the corpus plus `extra_vocab_texts`, so later edit targets
/// tokenize without unknowns.
pub fn pretrain<F: Real>(
    corpus: &[String],
    extra_vocab_texts: &[String],
    config: &PretrainConfig,
) -> Result<(LanguageModel<F>, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(EditError::Config("pre-training corpus is empty".into()));
    }
    let vocab = Vocabulary::build(
        corpus
            .iter()
            .map(String::as_str)
            .chain(extra_vocab_texts.iter().map(String::as_str)),
    );
    let mut model = LanguageModel::<F>::new(config.arch.clone(), vocab, config.seed);
    let examples: Vec<TrainingExample> = corpus
        .iter()
        .map(|sentence| TrainingExample {
            prompt_text: String::new(),
            target_text: format!("{sentence} <eos>"),
            origin_case_id: String::new(),
            kind: ExampleKind::PoolFact,
        })
        .collect();
    let trainable = trainable_names(&trainable_parameters(&mut model, &LayerSelection::all())?);
    let mut optimizer = AdamWState::new(AdamWConfig::default());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let loss = gradient_step(&mut model, &batch, &trainable, config.lr, &mut optimizer)?;
            total += loss.to_f64() * batch.len() as f64;
        }
        losses.push(total / examples.len() as f64);
    }
    Ok((model, losses))
}
