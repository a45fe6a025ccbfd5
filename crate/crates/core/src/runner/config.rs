//! Flat key-value experiment configs with dotted section keys.
//!
//! ```text
//! # desk-scale editing run
//! dataset.kind = synthetic
//! world.entities = 25
//! method = saul_r, ft
//! editor.lr = 2e-3
//! seed = 11
//! ```
//!
//! Unknown keys are rejected. Defaults mirror the reference hyperparameter
//! profile (40 epochs, patience 5, batch 32) with per-dataset learning
//! rates and augmented-fact counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::editkit::{EditorConfig, PretrainConfig};
use crate::evalsuite::EvalOptions;
use crate::factstore::{DatasetFormat, Method, WorldParams};
use crate::lmcore::{LayerSelection, ModelConfig};

use super::{Result, RunnerError};

/// Where the edits come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Synthetic(WorldParams),
    File {
        format: DatasetFormat,
        path: PathBuf,
    },
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Method grid; one run per entry.
    pub methods: Vec<Method>,
    pub editor: EditorConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalOptions,
    pub seed: u64,
    /// Optional pre-edit checkpoint; a fresh model is pre-trained when absent.
    pub model_checkpoint: Option<PathBuf>,
    /// Optional pool-candidate sentence file for file datasets.
    pub pool_path: Option<PathBuf>,
    /// Optional paraphrase-prefix file; bundled list when absent.
    pub prefixes_path: Option<PathBuf>,
    /// Optional per-case reference-text file (JSON map).
    pub references_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Original config text, for the run-directory snapshot.
    pub snapshot: String,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset.kind",
    "dataset.path",
    "dataset.pool",
    "dataset.prefixes",
    "dataset.references",
    "world.seed",
    "world.entities",
    "world.relations",
    "world.objects_per_relation",
    "model.checkpoint",
    "model.layers",
    "model.dim",
    "model.heads",
    "model.context",
    "pretrain.epochs",
    "pretrain.batch_size",
    "pretrain.lr",
    "method",
    "editor.layers",
    "editor.adapted",
    "editor.rank_scale",
    "editor.include_embed_head",
    "editor.epochs",
    "editor.patience",
    "editor.batch_size",
    "editor.lr",
    "editor.n_random_facts",
    "editor.weight_decay",
    "eval.gen_length",
    "eval.gen_prompts_per_case",
    "eval.fluency",
    "eval.consistency",
    "seed",
    "out_dir",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            RunnerError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(RunnerError::Config(format!(
                "line {}: unknown key {key:?}",
                lineno + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| RunnerError::Config(format!("key {key}: cannot parse value {v:?}"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") | Some("on") | Some("yes") => Ok(true),
            Some("false") | Some("off") | Some("no") => Ok(false),
            Some(v) => Err(RunnerError::Config(format!(
                "key {key}: expected a boolean, got {v:?}"
            ))),
        }
    }
}

fn parse_selection(pairs: &Pairs) -> Result<LayerSelection> {
    let spec = pairs.str("editor.layers").unwrap_or("all");
    let mut selection = if spec == "all" {
        LayerSelection::all()
    } else if let Some(idx) = spec.strip_prefix("single:") {
        let i = idx
            .parse()
            .map_err(|_| RunnerError::Config(format!("editor.layers: bad index {idx:?}")))?;
        LayerSelection::single(i)
    } else if let Some(range) = spec.strip_prefix("range:") {
        let (lo, hi) = range.split_once('-').ok_or_else(|| {
            RunnerError::Config(format!("editor.layers: expected range:LO-HI, got {spec:?}"))
        })?;
        let lo = lo
            .parse()
            .map_err(|_| RunnerError::Config(format!("editor.layers: bad range start {lo:?}")))?;
        let hi = hi
            .parse()
            .map_err(|_| RunnerError::Config(format!("editor.layers: bad range end {hi:?}")))?;
        if hi < lo {
            return Err(RunnerError::Config(
                "editor.layers: range end precedes start".into(),
            ));
        }
        LayerSelection::range(lo, hi)
    } else if let Some(rank) = spec.strip_prefix("lowrank:") {
        let r = rank
            .parse()
            .map_err(|_| RunnerError::Config(format!("editor.layers: bad rank {rank:?}")))?;
        LayerSelection::low_rank(r)
    } else {
        return Err(RunnerError::Config(format!(
            "editor.layers: expected all, single:K, range:LO-HI or lowrank:R, got {spec:?}"
        )));
    };
    if let Some(groups) = pairs.str("editor.adapted") {
        selection.adapted_groups = groups.split(',').map(|g| g.trim().to_string()).collect();
    }
    selection.scale = pairs.parse("editor.rank_scale", selection.scale)?;
    selection.include_embed_head =
        pairs.flag("editor.include_embed_head", selection.include_embed_head)?;
    Ok(selection)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            RunnerError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let pairs = Pairs(parse_pairs(text)?);

        let kind = pairs.str("dataset.kind").unwrap_or("synthetic");
        let seed = pairs.parse("seed", 0u64)?;
        let dataset = match kind {
            "synthetic" => DatasetSpec::Synthetic(WorldParams {
                seed: pairs.parse("world.seed", seed)?,
                n_entities: pairs.parse("world.entities", 25usize)?,
                n_relations: pairs.parse("world.relations", 4usize)?,
                objects_per_relation: pairs.parse("world.objects_per_relation", 6usize)?,
            }),
            other => {
                let format =
                    DatasetFormat::parse(other).map_err(|e| RunnerError::Config(e.to_string()))?;
                let path = pairs.str("dataset.path").ok_or_else(|| {
                    RunnerError::Config(format!("dataset.kind = {other} requires dataset.path"))
                })?;
                DatasetSpec::File {
                    format,
                    path: PathBuf::from(path),
                }
            }
        };

        // Learning rate and augmented-fact profiles per dataset.
        let (default_lr, default_nr) = match &dataset {
            DatasetSpec::File { format, .. } => match format {
                DatasetFormat::CounterFact => (5e-5, 20),
                DatasetFormat::Zsre => (2e-5, 20),
                DatasetFormat::WikiRecent => (1e-4, 10),
            },
            DatasetSpec::Synthetic(_) => (2e-3, 5),
        };

        let methods: Vec<Method> = match pairs.str("method") {
            None => vec![Method::SaulR],
            Some(list) => {
                let mut out = Vec::new();
                for tag in list.split(',') {
                    let m =
                        Method::parse(tag.trim()).map_err(|e| RunnerError::Usage(e.to_string()))?;
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                if out.is_empty() {
                    return Err(RunnerError::Config("method list is empty".into()));
                }
                out
            }
        };

        let editor = EditorConfig {
            method: methods[0],
            selection: parse_selection(&pairs)?,
            epochs: pairs.parse("editor.epochs", 40usize)?,
            patience: pairs.parse("editor.patience", 5usize)?,
            batch_size: pairs.parse("editor.batch_size", 32usize)?,
            lr: pairs.parse("editor.lr", default_lr)?,
            n_random_facts: pairs.parse("editor.n_random_facts", default_nr)?,
            seed,
            weight_decay: pairs.parse("editor.weight_decay", 0.0f64)?,
        };

        let arch = ModelConfig {
            n_layers: pairs.parse("model.layers", 4usize)?,
            d_model: pairs.parse("model.dim", 64usize)?,
            n_heads: pairs.parse("model.heads", 4usize)?,
            context_len: pairs.parse("model.context", 64usize)?,
            vocab_size: 0,
        };
        let pretrain = PretrainConfig {
            arch,
            epochs: pairs.parse("pretrain.epochs", 60usize)?,
            batch_size: pairs.parse("pretrain.batch_size", 32usize)?,
            lr: pairs.parse("pretrain.lr", 2e-3f64)?,
            seed,
        };

        let eval = EvalOptions {
            gen_length: pairs.parse("eval.gen_length", 100usize)?,
            gen_prompts_per_case: pairs.parse("eval.gen_prompts_per_case", 2usize)?,
            fluency: pairs.flag("eval.fluency", true)?,
            consistency: pairs.flag("eval.consistency", true)?,
        };

        Ok(RunConfig {
            dataset,
            methods,
            editor,
            pretrain,
            eval,
            seed,
            model_checkpoint: pairs.str("model.checkpoint").map(PathBuf::from),
            pool_path: pairs.str("dataset.pool").map(PathBuf::from),
            prefixes_path: pairs.str("dataset.prefixes").map(PathBuf::from),
            references_path: pairs.str("dataset.references").map(PathBuf::from),
            out_dir: pairs.str("out_dir").map(PathBuf::from),
            snapshot: text.to_string(),
        })
    }
}
