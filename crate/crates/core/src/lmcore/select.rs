//! Layer-grouped parameter selection and low-rank adapters.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::model::LanguageModel;
use super::tensor::Tensor;
use super::{LmError, Result};
use crate::num::Real;

/// Weight matrices inside a block that adapters may attach to.
pub const ADAPTABLE: &[&str] = &["wq", "wk", "wv", "wo", "fc1", "fc2"];

const ADAPTER_INIT_STD: f64 = 0.02;
const ADAPTER_SEED_SALT: u64 = 0x4c6f_5261; // deterministic offset for adapter init

/// One installed adapter: a rank-r factorized delta on a named weight.
/// `down` is (input dim × rank), `up` is (rank × output dim); `up` starts
/// at zero so a freshly adapted model matches the base model exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub target: String,
    pub rank: usize,
    pub scale: f64,
}

impl AdapterSpec {
    pub fn down_name(&self) -> String {
        format!("{}.lora_down", self.target)
    }

    pub fn up_name(&self) -> String {
        format!("{}.lora_up", self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Single,
    Range,
    All,
    LowRank,
}

/// Which parameters an edit run is allowed to touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub mode: SelectionMode,
    /// Block indices, 0-based (single/range modes).
    pub indices: Vec<usize>,
    /// Adapter rank (lowrank mode).
    pub rank: usize,
    /// Adapter output scale (lowrank mode).
    pub scale: f64,
    /// Block weight matrices that receive adapters (lowrank mode).
    pub adapted_groups: Vec<String>,
    /// Whether `all` also trains the embedding and head groups.
    pub include_embed_head: bool,
}

impl LayerSelection {
    pub fn all() -> Self {
        LayerSelection {
            mode: SelectionMode::All,
            indices: Vec::new(),
            rank: 0,
            scale: 1.0,
            adapted_groups: Vec::new(),
            include_embed_head: true,
        }
    }

    pub fn single(index: usize) -> Self {
        LayerSelection {
            mode: SelectionMode::Single,
            indices: vec![index],
            rank: 0,
            scale: 1.0,
            adapted_groups: Vec::new(),
            include_embed_head: false,
        }
    }

    /// Inclusive block range.
    pub fn range(lo: usize, hi: usize) -> Self {
        LayerSelection {
            mode: SelectionMode::Range,
            indices: (lo..=hi).collect(),
            rank: 0,
            scale: 1.0,
            adapted_groups: Vec::new(),
            include_embed_head: false,
        }
    }

    pub fn low_rank(rank: usize) -> Self {
        LayerSelection {
            mode: SelectionMode::LowRank,
            indices: Vec::new(),
            rank,
            scale: 1.0,
            adapted_groups: vec!["wq".to_string(), "wv".to_string()],
            include_embed_head: false,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        match self.mode {
            SelectionMode::Single | SelectionMode::Range => {
                if self.indices.is_empty() {
                    return Err(LmError::Selection("no layer indices given".into()));
                }
                for &i in &self.indices {
                    if i >= n_layers {
                        return Err(LmError::Selection(format!(
                            "layer index {i} out of range for {n_layers}-layer model"
                        )));
                    }
                }
                if self.mode == SelectionMode::Single && self.indices.len() != 1 {
                    return Err(LmError::Selection(
                        "single mode takes exactly one index".into(),
                    ));
                }
            }
            SelectionMode::All => {}
            SelectionMode::LowRank => {
                if self.rank == 0 {
                    return Err(LmError::Selection("adapter rank must be at least 1".into()));
                }
                if self.adapted_groups.is_empty() {
                    return Err(LmError::Selection(
                        "no adapted weight matrices named".into(),
                    ));
                }
                for g in &self.adapted_groups {
                    if !ADAPTABLE.contains(&g.as_str()) {
                        return Err(LmError::Selection(format!(
                            "unknown adapted weight matrix {g:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A named parameter group and its tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub tensors: Vec<String>,
}

/// Resolves a selection into the trainable parameter groups.
///
/// For `lowrank`, zero-initialized adapters are installed on the named
/// weight matrices of every block first (idempotently), and only the
/// adapter tensors come back trainable.
pub fn trainable_parameters<F: Real>(
    model: &mut LanguageModel<F>,
    selection: &LayerSelection,
) -> Result<Vec<ParamGroup>> {
    selection.validate(model.config.n_layers)?;
    let groups = model.groups();
    let mut out = Vec::new();
    match selection.mode {
        SelectionMode::All => {
            for (name, tensors) in &groups {
                if !selection.include_embed_head && (name == "embedding" || name == "head") {
                    continue;
                }
                out.push(ParamGroup {
                    name: name.clone(),
                    tensors: tensors.clone(),
                });
            }
        }
        SelectionMode::Single | SelectionMode::Range => {
            for &i in &selection.indices {
                let name = format!("block{i}");
                out.push(ParamGroup {
                    name: name.clone(),
                    tensors: groups[&name].clone(),
                });
            }
        }
        SelectionMode::LowRank => {
            install_adapters(model, selection)?;
            for layer in 0..model.config.n_layers {
                let block = format!("block{layer}");
                let tensors: Vec<String> = selection
                    .adapted_groups
                    .iter()
                    .flat_map(|g| {
                        let target = format!("{block}.{g}");
                        [format!("{target}.lora_down"), format!("{target}.lora_up")]
                    })
                    .collect();
                out.push(ParamGroup {
                    name: block,
                    tensors,
                });
            }
        }
    }
    Ok(out)
}

/// Flattened set of trainable tensor names.
pub fn trainable_names(groups: &[ParamGroup]) -> BTreeSet<String> {
    groups
        .iter()
        .flat_map(|g| g.tensors.iter().cloned())
        .collect()
}

/// Installs zero-initialized adapters on every block's named weights.
/// The down projection is Gaussian, the up projection all zeros, so the
/// adapted model's outputs equal the base model's exactly. Idempotent.
pub fn install_adapters<F: Real>(
    model: &mut LanguageModel<F>,
    selection: &LayerSelection,
) -> Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(model.init_seed.wrapping_add(ADAPTER_SEED_SALT));
    for layer in 0..model.config.n_layers {
        for g in &selection.adapted_groups {
            let target = format!("block{layer}.{g}");
            let base = model
                .params
                .get(&target)
                .ok_or_else(|| LmError::Selection(format!("no weight named {target}")))?;
            let (rows, cols) = (base.rows, base.cols);
            let spec = AdapterSpec {
                target: target.clone(),
                rank: selection.rank,
                scale: selection.scale,
            };
            if model.adapters.iter().any(|a| a.target == target) {
                continue;
            }
            // down: (input dim × rank), up: (rank × output dim)
            let down = Tensor::randn(cols, selection.rank, ADAPTER_INIT_STD, &mut rng);
            let up = Tensor::zeros(selection.rank, rows);
            model.params.insert(spec.down_name(), down);
            model.params.insert(spec.up_name(), up);
            model.adapters.push(spec);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmcore::{Decoding, ModelConfig, Vocabulary};

    fn model() -> LanguageModel<f64> {
        let vocab = Vocabulary::build(["Alma lives in Oslo .", "Boris speaks Greek ."]);
        let mut cfg = ModelConfig::tiny();
        cfg.n_layers = 4;
        LanguageModel::new(cfg, vocab, 13)
    }

    #[test]
    fn range_selects_only_named_blocks() {
        let mut m = model();
        let groups = trainable_parameters(&mut m, &LayerSelection::range(1, 2)).unwrap();
        let names: Vec<&str> = groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, vec!["block1", "block2"]);
        assert!(groups
            .iter()
            .all(|g| g.tensors.iter().all(|t| t.starts_with(&g.name))));
    }

    #[test]
    fn all_returns_blocks_embedding_and_head() {
        let mut m = model();
        let groups = trainable_parameters(&mut m, &LayerSelection::all()).unwrap();
        let names: BTreeSet<&str> = groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(groups.len(), 6);
        assert!(names.contains("embedding"));
        assert!(names.contains("head"));
        assert!(names.contains("block3"));
    }

    #[test]
    fn lowrank_parameter_count_matches_shapes() {
        // rank 2 adapters on one d×d matrix per block, d=8, 4 blocks:
        // 4 · 2 · (8 + 8) = 128 adapter parameters.
        let vocab = Vocabulary::build(["a b c"]);
        let cfg = ModelConfig {
            n_layers: 4,
            d_model: 8,
            n_heads: 2,
            context_len: 16,
            vocab_size: 0,
        };
        let mut m = LanguageModel::<f64>::new(cfg, vocab, 7);
        let mut sel = LayerSelection::low_rank(2);
        sel.adapted_groups = vec!["wq".to_string()];
        let groups = trainable_parameters(&mut m, &sel).unwrap();
        let total: usize = trainable_names(&groups)
            .iter()
            .map(|n| m.params[n].len())
            .sum();
        assert_eq!(total, 128);
    }

    #[test]
    fn zero_initialized_adapters_preserve_logits() {
        let base = model();
        let mut adapted = base.clone();
        trainable_parameters(&mut adapted, &LayerSelection::low_rank(3)).unwrap();
        let prompt = base.tokenize("Alma lives in");
        let a = base.next_token_logits(&prompt.ids).unwrap();
        let b = adapted.next_token_logits(&prompt.ids).unwrap();
        assert_eq!(a, b);
        let ga = base.generate(&prompt, 6, Decoding::Greedy).unwrap();
        let gb = adapted.generate(&prompt, 6, Decoding::Greedy).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut m = model();
        let err = trainable_parameters(&mut m, &LayerSelection::single(9)).unwrap_err();
        assert!(matches!(err, LmError::Selection(_)));
    }

    #[test]
    fn adapter_install_is_idempotent() {
        let mut m = model();
        let sel = LayerSelection::low_rank(2);
        trainable_parameters(&mut m, &sel).unwrap();
        let count = m.adapters.len();
        trainable_parameters(&mut m, &sel).unwrap();
        assert_eq!(m.adapters.len(), count);
    }
}
