//! Edit requests, augmentation pools, and training-example assembly.

mod dataset;
pub mod fixtures;
mod synth;

pub use dataset::{load_dataset, DatasetFormat};
pub use synth::{synth_world, SynthWorld, WorldParams};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FactStoreError {
    #[error("record {index}: {message}")]
    Parse { index: usize, message: String },
    #[error("unknown dataset format {0:?} (expected counterfact, zsre, or wikirecent)")]
    UnknownFormat(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset file is not valid: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FactStoreError>;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// An out-of-scope probe: a prompt about an unrelated fact and the object
/// that must remain preferred after editing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodProbe {
    pub prompt: String,
    pub expected: String,
}

/// One requested edit: install `target_new` as the object of the
/// (subject, relation) fact realized by `prompt_template`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub case_id: String,
    pub subject: String,
    /// Template with exactly one `{}` placeholder for the subject.
    pub prompt_template: String,
    pub relation_id: String,
    pub target_new: String,
    /// The model's original/correct object.
    pub target_true: String,
    /// Equivalence-neighborhood prompts realizing the same fact in
    /// different words.
    pub paraphrases: Vec<String>,
    pub neighborhood_prompts: Vec<NeighborhoodProbe>,
}

impl EditRequest {
    /// The base prompt, with the subject substituted into the template.
    pub fn realized_prompt(&self) -> String {
        self.prompt_template.replacen("{}", &self.subject, 1)
    }

    /// The full declarative edit sentence: realized prompt, new object,
    /// sentence-final period.
    pub fn edit_sentence(&self) -> String {
        format!(
            "{} {}",
            self.realized_prompt(),
            ensure_terminal(&self.target_new)
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt_template.matches("{}").count() != 1 {
            return Err(FactStoreError::Config(format!(
                "case {}: prompt template must contain exactly one {{}} placeholder",
                self.case_id
            )));
        }
        if self.subject.is_empty() || self.realized_prompt().trim().is_empty() {
            return Err(FactStoreError::Config(format!(
                "case {}: realized prompt is empty",
                self.case_id
            )));
        }
        if self.target_new == self.target_true {
            return Err(FactStoreError::Config(format!(
                "case {}: target_new equals target_true, nothing to edit",
                self.case_id
            )));
        }
        let base = self.realized_prompt();
        if self.paraphrases.iter().any(|p| p == &base) {
            return Err(FactStoreError::Config(format!(
                "case {}: a paraphrase repeats the base prompt",
                self.case_id
            )));
        }
        Ok(())
    }
}

/// A full declarative sentence describing one true fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSentence {
    pub text: String,
    /// Whether `text` already ends with sentence-final punctuation.
    pub terminal: bool,
}

impl FactSentence {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let terminal = is_terminal(&text);
        FactSentence { text, terminal }
    }

    /// The sentence with a period appended when it lacks terminal
    /// punctuation, as required before any concatenation.
    pub fn terminated(&self) -> String {
        if self.terminal {
            self.text.clone()
        } else {
            format!("{}.", self.text)
        }
    }
}

fn is_terminal(text: &str) -> bool {
    matches!(
        text.trim_end().chars().last(),
        Some('.') | Some('!') | Some('?')
    )
}

fn ensure_terminal(text: &str) -> String {
    if is_terminal(text) {
        text.to_string()
    } else {
        format!("{}.", text)
    }
}

/// The set of unrelated true fact sentences available for augmentation,
/// with a per-edit assignment of `n_per_edit` facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPool {
    pub facts: Vec<FactSentence>,
    pub n_per_edit: usize,
    pub assignment: BTreeMap<String, Vec<usize>>,
}

impl AugmentationPool {
    pub fn assigned<'a>(&'a self, case_id: &str) -> Result<Vec<&'a FactSentence>> {
        let idxs = self.assignment.get(case_id).ok_or_else(|| {
            FactStoreError::Usage(format!("pool has no assignment for case {case_id}"))
        })?;
        Ok(idxs.iter().map(|&i| &self.facts[i]).collect())
    }

    pub fn validate(&self, edits: &[EditRequest]) -> Result<()> {
        for (case, idxs) in &self.assignment {
            if idxs.len() != self.n_per_edit {
                return Err(FactStoreError::Config(format!(
                    "case {case}: assignment has {} facts, expected {}",
                    idxs.len(),
                    self.n_per_edit
                )));
            }
            if idxs.iter().any(|&i| i >= self.facts.len()) {
                return Err(FactStoreError::Config(format!(
                    "case {case}: assignment index out of range"
                )));
            }
        }
        for fact in &self.facts {
            for edit in edits {
                if shares_subject_relation(&fact.text, edit) {
                    return Err(FactStoreError::Config(format!(
                        "pool fact {:?} shares (subject, relation) with case {}",
                        fact.text, edit.case_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Textual proxy for "fact describes the same (subject, relation)": the
/// sentence starts, at a word boundary, with the edit's realized base
/// prompt or one of its paraphrase prompts.
pub fn shares_subject_relation(fact_text: &str, edit: &EditRequest) -> bool {
    let mut prompts = vec![edit.realized_prompt()];
    prompts.extend(edit.paraphrases.iter().cloned());
    prompts.iter().any(|p| {
        !p.is_empty()
            && fact_text.starts_with(p.as_str())
            && fact_text[p.len()..].chars().next().is_none_or(|c| {
                c.is_whitespace() || is_terminal(&c.to_string()) || c == ','
            })
    })
}

/// Free-text fragments prepended to the edit sentence by the paraphrase
/// augmentation baselines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphrasePrefixSet {
    pub prefixes: Vec<String>,
}

impl ParaphrasePrefixSet {
    pub fn new(prefixes: Vec<String>) -> Self {
        ParaphrasePrefixSet { prefixes }
    }
}

/// What material a training example carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    /// Prompt → new object only.
    Edit,
    /// Prompt → new object followed by an assigned pool sentence.
    EditConcat,
    /// Standalone unrelated true fact (empty prompt).
    PoolFact,
    /// Paraphrase-prefix material, either prepended or as a suffix.
    ParaphrasePrefixed,
}

/// One optimization summand: loss lands on `target_text` conditioned on
/// `prompt_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt_text: String,
    pub target_text: String,
    /// Empty for standalone pool facts.
    pub origin_case_id: String,
    pub kind: ExampleKind,
}

// ---------------------------------------------------------------------------
// Method catalog
// ---------------------------------------------------------------------------

/// The seven editing variants: naive fine-tuning, fine-tuning with random
/// and/or paraphrase augmentation, and sentence concatenation with random
/// facts and/or paraphrase material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ft,
    FtR,
    FtP,
    FtPr,
    SaulR,
    SaulP,
    SaulPr,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ft,
        Method::FtR,
        Method::FtP,
        Method::FtPr,
        Method::SaulR,
        Method::SaulP,
        Method::SaulPr,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ft => "ft",
            Method::FtR => "ft_r",
            Method::FtP => "ft_p",
            Method::FtPr => "ft_pr",
            Method::SaulR => "saul_r",
            Method::SaulP => "saul_p",
            Method::SaulPr => "saul_pr",
        }
    }

    pub fn parse(tag: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == tag)
            .ok_or_else(|| FactStoreError::Usage(format!("unknown method tag {tag:?}")))
    }

    /// Whether the method consumes an augmentation pool.
    pub fn uses_random_facts(self) -> bool {
        matches!(
            self,
            Method::FtR | Method::FtPr | Method::SaulR | Method::SaulPr
        )
    }

    /// Whether the method consumes paraphrase prefixes.
    pub fn uses_prefixes(self) -> bool {
        matches!(
            self,
            Method::FtP | Method::FtPr | Method::SaulP | Method::SaulPr
        )
    }

    /// Whether the method trains on concatenated sentences.
    pub fn is_concat(self) -> bool {
        matches!(self, Method::SaulR | Method::SaulP | Method::SaulPr)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

// ---------------------------------------------------------------------------
// Pool construction
// ---------------------------------------------------------------------------

/// Samples `n_per_edit` unrelated facts per edit, uniformly without
/// replacement, from the candidates that survive the (subject, relation)
/// disjointness filter. Deterministic in `seed`.
pub fn build_pool(
    edits: &[EditRequest],
    candidate_facts: &[FactSentence],
    n_per_edit: usize,
    seed: u64,
) -> Result<AugmentationPool> {
    if n_per_edit == 0 {
        return Err(FactStoreError::Config(
            "n_per_edit must be a positive integer".into(),
        ));
    }
    let facts: Vec<FactSentence> = candidate_facts
        .iter()
        .filter(|f| !f.text.trim().is_empty())
        .filter(|f| !edits.iter().any(|e| shares_subject_relation(&f.text, e)))
        .cloned()
        .collect();
    if facts.len() < n_per_edit {
        return Err(FactStoreError::Config(format!(
            "need {n_per_edit} unrelated facts per edit but only {} candidates remain \
             after filtering {} against the edit batch",
            facts.len(),
            candidate_facts.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for edit in edits {
        let mut idxs = rand::seq::index::sample(&mut rng, facts.len(), n_per_edit).into_vec();
        idxs.sort_unstable();
        assignment.insert(edit.case_id.clone(), idxs);
    }
    Ok(AugmentationPool {
        facts,
        n_per_edit,
        assignment,
    })
}

// ---------------------------------------------------------------------------
// Training-example assembly
// ---------------------------------------------------------------------------

/// Joins the new object and a trailing sentence: the leading part gets a
/// period if it lacks one, then the two are joined by a single space.
fn concat_target(target_new: &str, trailing: &str) -> String {
    format!("{} {}", ensure_terminal(target_new), trailing)
}

/// Materializes the optimization summands for a method.
///
/// Per edit: `ft` yields the bare (prompt → new object) example; the `_r`
/// family adds or concatenates the assigned pool facts; the `_p` family
/// adds or concatenates the paraphrase prefixes. Combined variants are the
/// union of their parts.
pub fn build_training_examples(
    edits: &[EditRequest],
    pool: Option<&AugmentationPool>,
    prefixes: Option<&ParaphrasePrefixSet>,
    method: Method,
) -> Result<Vec<TrainingExample>> {
    let pool = if method.uses_random_facts() {
        Some(pool.ok_or_else(|| {
            FactStoreError::Usage(format!("method {method} requires an augmentation pool"))
        })?)
    } else {
        None
    };
    let prefixes = if method.uses_prefixes() {
        let set = prefixes.ok_or_else(|| {
            FactStoreError::Usage(format!("method {method} requires paraphrase prefixes"))
        })?;
        if set.prefixes.is_empty() {
            return Err(FactStoreError::Usage(format!(
                "method {method} requires a non-empty paraphrase prefix set"
            )));
        }
        Some(set)
    } else {
        None
    };

    let mut out = Vec::new();
    for edit in edits {
        let realized = edit.realized_prompt();
        if !method.is_concat() {
            out.push(TrainingExample {
                prompt_text: realized.clone(),
                target_text: edit.target_new.clone(),
                origin_case_id: edit.case_id.clone(),
                kind: ExampleKind::Edit,
            });
        }
        if let Some(pool) = pool {
            for fact in pool.assigned(&edit.case_id)? {
                if method.is_concat() {
                    out.push(TrainingExample {
                        prompt_text: realized.clone(),
                        target_text: concat_target(&edit.target_new, &fact.terminated()),
                        origin_case_id: edit.case_id.clone(),
                        kind: ExampleKind::EditConcat,
                    });
                } else {
                    out.push(TrainingExample {
                        prompt_text: String::new(),
                        target_text: fact.text.clone(),
                        origin_case_id: String::new(),
                        kind: ExampleKind::PoolFact,
                    });
                }
            }
        }
        if let Some(set) = prefixes {
            for prefix in &set.prefixes {
                if method.is_concat() {
                    out.push(TrainingExample {
                        prompt_text: realized.clone(),
                        target_text: concat_target(&edit.target_new, &ensure_terminal(prefix)),
                        origin_case_id: edit.case_id.clone(),
                        kind: ExampleKind::ParaphrasePrefixed,
                    });
                } else {
                    out.push(TrainingExample {
                        prompt_text: prefix.clone(),
                        target_text: edit.edit_sentence(),
                        origin_case_id: edit.case_id.clone(),
                        kind: ExampleKind::ParaphrasePrefixed,
                    });
                }
            }
        }
    }
    Ok(out)
}
