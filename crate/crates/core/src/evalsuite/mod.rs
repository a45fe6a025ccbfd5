//! Post-edit evaluation: preference probes, the three editing metrics with
//! their harmonic score, generation fluency and consistency, and per-run
//! report assembly.

mod metrics;

pub use metrics::{harmonic_score, ngram_entropy_fluency, tfidf_consistency};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::editkit::EditRun;
use crate::factstore::EditRequest;
use crate::lmcore::{load_checkpoint, Decoding, LanguageModel, LmError};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric input out of domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("run is missing a loadable checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("no cases could be evaluated ({0} failures)")]
    AllCasesFailed(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A preference probe: `preferred` should out-score `dispreferred` as a
/// continuation of `prompt`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePair {
    pub prompt: String,
    pub preferred: String,
    pub dispreferred: String,
}

/// True iff the model assigns the preferred object a strictly greater
/// continuation log-probability. Exact ties fail.
pub fn probe_preference<F: Real>(model: &LanguageModel<F>, probe: &ProbePair) -> Result<bool> {
    let prompt = model.tokenize(&probe.prompt);
    let preferred = model.continuation_logprob(&prompt, &model.tokenize(&probe.preferred))?;
    let dispreferred = model.continuation_logprob(&prompt, &model.tokenize(&probe.dispreferred))?;
    Ok(preferred > dispreferred)
}

fn efficacy_probe(edit: &EditRequest) -> ProbePair {
    ProbePair {
        prompt: edit.realized_prompt(),
        preferred: edit.target_new.clone(),
        dispreferred: edit.target_true.clone(),
    }
}

fn generality_probes(edit: &EditRequest) -> Vec<ProbePair> {
    edit.paraphrases
        .iter()
        .map(|p| ProbePair {
            prompt: p.clone(),
            preferred: edit.target_new.clone(),
            dispreferred: edit.target_true.clone(),
        })
        .collect()
}

fn locality_probes(edit: &EditRequest) -> Vec<ProbePair> {
    edit.neighborhood_prompts
        .iter()
        // A probe expecting the installed object cannot distinguish anything.
        .filter(|np| np.expected != edit.target_new)
        .map(|np| ProbePair {
            prompt: np.prompt.clone(),
            preferred: np.expected.clone(),
            dispreferred: edit.target_new.clone(),
        })
        .collect()
}

fn probe_fraction<F: Real>(model: &LanguageModel<F>, probes: &[ProbePair]) -> Result<Option<f64>> {
    if probes.is_empty() {
        return Ok(None);
    }
    let mut passed = 0usize;
    for p in probes {
        if probe_preference(model, p)? {
            passed += 1;
        }
    }
    Ok(Some(passed as f64 / probes.len() as f64))
}

/// Percentage of edits whose base-prompt probe prefers the new object.
pub fn efficacy<F: Real>(model: &LanguageModel<F>, edits: &[EditRequest]) -> Result<f64> {
    let mut passed = 0usize;
    for e in edits {
        if probe_preference(model, &efficacy_probe(e))? {
            passed += 1;
        }
    }
    Ok(100.0 * passed as f64 / edits.len() as f64)
}

/// Mean per-case fraction of paraphrase probes preferring the new object,
/// over cases that have paraphrases; absent when none do.
pub fn generality<F: Real>(model: &LanguageModel<F>, edits: &[EditRequest]) -> Result<Option<f64>> {
    mean_case_fraction(model, edits, generality_probes)
}

/// Mean per-case fraction of out-of-scope probes still preferring their
/// true object; absent when no case has probes.
pub fn locality<F: Real>(model: &LanguageModel<F>, edits: &[EditRequest]) -> Result<Option<f64>> {
    mean_case_fraction(model, edits, locality_probes)
}

fn mean_case_fraction<F: Real>(
    model: &LanguageModel<F>,
    edits: &[EditRequest],
    probes_of: impl Fn(&EditRequest) -> Vec<ProbePair>,
) -> Result<Option<f64>> {
    let mut sum = 0.0f64;
    let mut counted = 0usize;
    for e in edits {
        if let Some(frac) = probe_fraction(model, &probes_of(e))? {
            sum += frac;
            counted += 1;
        }
    }
    Ok((counted > 0).then(|| 100.0 * sum / counted as f64))
}

/// Per-case metric record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub efficacy_pass: f64,
    pub generality_pass: Option<f64>,
    pub locality_pass: Option<f64>,
    pub fluency: Option<f64>,
    pub consistency: Option<f64>,
}

/// Aggregate metric record for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub efficacy: f64,
    pub generality: Option<f64>,
    pub locality: Option<f64>,
    /// Harmonic mean of the three editing metrics; absent when generality
    /// or locality is.
    pub score: Option<f64>,
    pub fluency: Option<f64>,
    pub consistency: Option<f64>,
    pub n_cases: usize,
    /// Cases dropped from the aggregates because a probe errored.
    pub warnings: usize,
    pub run_ref: String,
}

/// Evaluation knobs: how many generation prompts per case, how long the
/// greedy generations run, and which generation metrics to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub gen_prompts_per_case: usize,
    pub gen_length: usize,
    pub fluency: bool,
    pub consistency: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            gen_prompts_per_case: 2,
            gen_length: 100,
            fluency: true,
            consistency: true,
        }
    }
}

fn evaluate_case<F: Real>(
    model: &LanguageModel<F>,
    edit: &EditRequest,
    opts: &EvalOptions,
    references: Option<&Vec<String>>,
) -> Result<CaseResult> {
    let efficacy_pass = if probe_preference(model, &efficacy_probe(edit))? {
        1.0
    } else {
        0.0
    };
    let generality_pass = probe_fraction(model, &generality_probes(edit))?;
    let locality_pass = probe_fraction(model, &locality_probes(edit))?;

    let mut fluency = None;
    let mut consistency = None;
    if opts.fluency || opts.consistency {
        let mut prompts = vec![edit.realized_prompt()];
        prompts.extend(edit.paraphrases.iter().cloned());
        prompts.truncate(opts.gen_prompts_per_case.max(1));
        let mut texts = Vec::with_capacity(prompts.len());
        for p in &prompts {
            let seq = model.tokenize(p);
            let out = model.generate(&seq, opts.gen_length, Decoding::Greedy)?;
            texts.push(format!("{p} {}", out.text));
        }
        if opts.fluency {
            fluency = Some(ngram_entropy_fluency::<f64>(&texts));
        }
        if opts.consistency {
            consistency = references
                .filter(|r| !r.is_empty())
                .map(|refs| tfidf_consistency::<f64>(&texts.join(" "), refs));
        }
    }

    Ok(CaseResult {
        case_id: edit.case_id.clone(),
        efficacy_pass,
        generality_pass,
        locality_pass,
        fluency,
        consistency,
    })
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates every edit against a loaded model and assembles the aggregate
/// report. Cases whose probes error are excluded and counted as warnings.
pub fn evaluate_model<F: Real>(
    model: &LanguageModel<F>,
    edits: &[EditRequest],
    opts: &EvalOptions,
    references: &BTreeMap<String, Vec<String>>,
    run_ref: &str,
) -> Result<(Vec<CaseResult>, EvalReport)> {
    let mut cases = Vec::with_capacity(edits.len());
    let mut warnings = 0usize;
    for edit in edits {
        match evaluate_case(model, edit, opts, references.get(&edit.case_id)) {
            Ok(case) => cases.push(case),
            Err(EvalError::Lm(_)) => warnings += 1,
            Err(other) => return Err(other),
        }
    }
    if cases.is_empty() {
        return Err(EvalError::AllCasesFailed(warnings));
    }

    let efficacy = 100.0 * cases.iter().map(|c| c.efficacy_pass).sum::<f64>() / cases.len() as f64;
    let generality = mean_present(cases.iter().map(|c| c.generality_pass)).map(|v| 100.0 * v);
    let locality = mean_present(cases.iter().map(|c| c.locality_pass)).map(|v| 100.0 * v);
    let score = match (generality, locality) {
        (Some(g), Some(l)) => Some(harmonic_score(efficacy, g, l)?),
        _ => None,
    };
    let report = EvalReport {
        efficacy,
        generality,
        locality,
        score,
        fluency: mean_present(cases.iter().map(|c| c.fluency)),
        consistency: mean_present(cases.iter().map(|c| c.consistency)),
        n_cases: cases.len(),
        warnings,
        run_ref: run_ref.to_string(),
    };
    Ok((cases, report))
}

/// Loads the run's post-edit checkpoint and evaluates it.
pub fn evaluate_run<F: Real>(
    run: &EditRun,
    edits: &[EditRequest],
    opts: &EvalOptions,
    references: &BTreeMap<String, Vec<String>>,
) -> Result<(Vec<CaseResult>, EvalReport)> {
    let path = run
        .post_model_ref
        .as_deref()
        .ok_or_else(|| EvalError::MissingCheckpoint("run has no post-edit reference".into()))?;
    let checkpoint = load_checkpoint::<F>(Path::new(path))
        .map_err(|e| EvalError::MissingCheckpoint(format!("{path}: {e}")))?;
    let (model, _) = checkpoint.into_model()?;
    evaluate_model(&model, edits, opts, references, path)
}
