//! Self-describing checkpoint container.
//!
//! A checkpoint holds the architecture, vocabulary, every named tensor,
//! the optimizer state (if any), and the init seed. Serialization is JSON
//! with shortest-round-trip float formatting, so loading a checkpoint
//! restores bit-identical behavior and identical checkpoints are
//! byte-identical on disk.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LanguageModel, ModelConfig};
use super::optim::AdamWState;
use super::select::AdapterSpec;
use super::tensor::Tensor;
use super::vocab::Vocabulary;
use super::{LmError, Result};
use crate::num::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: BTreeMap<String, Tensor<F>>,
    pub adapters: Vec<AdapterSpec>,
    pub init_seed: u64,
    pub optimizer: Option<AdamWState<F>>,
}

impl<F: Real> Checkpoint<F> {
    pub fn from_model(model: &LanguageModel<F>, optimizer: Option<&AdamWState<F>>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
            adapters: model.adapters.clone(),
            init_seed: model.init_seed,
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_model(mut self) -> Result<(LanguageModel<F>, Option<AdamWState<F>>)> {
        self.vocab.rebuild_index();
        if self.vocab.len() != self.config.vocab_size {
            return Err(LmError::Corrupt(format!(
                "vocabulary has {} entries but config says {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        for (name, t) in &self.params {
            if t.data.len() != t.rows * t.cols {
                return Err(LmError::Corrupt(format!(
                    "tensor {name} has {} elements for shape {}x{}",
                    t.data.len(),
                    t.rows,
                    t.cols
                )));
            }
        }
        for spec in &self.adapters {
            for required in [spec.target.clone(), spec.down_name(), spec.up_name()] {
                if !self.params.contains_key(&required) {
                    return Err(LmError::Corrupt(format!(
                        "adapter on {} references missing tensor {required}",
                        spec.target
                    )));
                }
            }
        }
        let model = LanguageModel {
            config: self.config,
            vocab: self.vocab,
            params: self.params,
            adapters: self.adapters,
            init_seed: self.init_seed,
        };
        Ok((model, self.optimizer))
    }
}

pub fn save_checkpoint<F: Real>(path: &Path, checkpoint: &Checkpoint<F>) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, checkpoint)?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Checkpoint<F>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let checkpoint = serde_json::from_reader(reader)?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmcore::Decoding;

    #[test]
    fn round_trip_restores_bit_identical_behavior() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::build(["Alma lives in Oslo .", "Boris speaks Greek ."]);
        let model = LanguageModel::<f64>::new(ModelConfig::tiny(), vocab, 21);
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&path, &Checkpoint::from_model(&model, None)).unwrap();
        let (loaded, opt) = load_checkpoint::<f64>(&path).unwrap().into_model().unwrap();
        assert!(opt.is_none());
        assert_eq!(model.fingerprints(), loaded.fingerprints());
        let prompt = model.tokenize("Alma lives in");
        assert_eq!(
            model.generate(&prompt, 8, Decoding::Greedy).unwrap(),
            loaded.generate(&prompt, 8, Decoding::Greedy).unwrap()
        );
        assert_eq!(
            model.next_token_logits(&prompt.ids).unwrap(),
            loaded.next_token_logits(&prompt.ids).unwrap()
        );
    }

    #[test]
    fn identical_models_serialize_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::build(["Alma lives in Oslo ."]);
        let a = LanguageModel::<f64>::new(ModelConfig::tiny(), vocab.clone(), 5);
        let b = LanguageModel::<f64>::new(ModelConfig::tiny(), vocab, 5);
        let pa = dir.path().join("a.json");
        let pb = dir.path().join("b.json");
        save_checkpoint(&pa, &Checkpoint::from_model(&a, None)).unwrap();
        save_checkpoint(&pb, &Checkpoint::from_model(&b, None)).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn corrupt_shapes_are_rejected() {
        let vocab = Vocabulary::build(["a b"]);
        let model = LanguageModel::<f64>::new(ModelConfig::tiny(), vocab, 1);
        let mut ckpt = Checkpoint::from_model(&model, None);
        ckpt.params.get_mut("wte").unwrap().data.pop();
        assert!(matches!(ckpt.into_model(), Err(LmError::Corrupt(_))));
    }
}
