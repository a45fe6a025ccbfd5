//! Experiment manager behind the CLI: config loading, the
//! edit → evaluate → report pipeline, run-directory persistence, and
//! self-test diagnostics.

mod config;
mod report;
mod rundir;

pub use config::{DatasetSpec, RunConfig};
pub use report::{render_table, ReportRow, TableFormat};
pub use rundir::{
    ErrorRecord, LossRecord, RunDir, TimingRecord, CASE_RECORDS, CONFIG_SNAPSHOT, EDITS_FILE,
    ERROR_RECORD, EVAL_OPTIONS_FILE, LOSS_RECORD, POST_CHECKPOINT, PRE_CHECKPOINT, REFERENCES_FILE,
    REPORT_FILE, RUN_RECORD, TIMING_RECORD,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::editkit::{pretrain, run_edit, EditError, PretrainConfig};
use crate::evalsuite::{
    evaluate_model, harmonic_score, ngram_entropy_fluency, tfidf_consistency, EvalError, EvalReport,
};
use crate::factstore::TrainingExample;
use crate::factstore::{
    build_pool, fixtures, load_dataset, EditRequest, FactSentence, FactStoreError,
    ParaphrasePrefixSet, SynthWorld,
};
use crate::lmcore::{
    finite_difference_check, load_checkpoint, save_checkpoint, Checkpoint, LmError,
};
use crate::{Model, Scalar};

/// Environment variable naming the default output root for run directories.
pub const OUT_ROOT_ENV: &str = "SAULKIT_OUT";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl RunnerError {
    /// Process exit status: 2 for usage/config problems, 3 for
    /// numeric/integrity failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Usage(_) | RunnerError::Config(_) => 2,
            RunnerError::Integrity(_) | RunnerError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;

impl From<FactStoreError> for RunnerError {
    fn from(e: FactStoreError) -> Self {
        match e {
            FactStoreError::Usage(msg) => RunnerError::Usage(msg),
            FactStoreError::UnknownFormat(_) => RunnerError::Usage(e.to_string()),
            FactStoreError::Config(msg) => RunnerError::Config(msg),
            other => RunnerError::Config(other.to_string()),
        }
    }
}

impl From<LmError> for RunnerError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Numeric { .. } => RunnerError::Numeric(e.to_string()),
            other => RunnerError::Config(other.to_string()),
        }
    }
}

impl From<EditError> for RunnerError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Config(msg) => RunnerError::Config(msg),
            EditError::Facts(inner) => inner.into(),
            EditError::Lm(inner) => inner.into(),
            EditError::Training {
                epoch,
                batch,
                source,
            } => match source {
                LmError::Numeric { .. } => {
                    RunnerError::Numeric(format!("epoch {epoch}, batch {batch}: {source}"))
                }
                other => RunnerError::Config(format!("epoch {epoch}, batch {batch}: {other}")),
            },
        }
    }
}

impl From<EvalError> for RunnerError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Domain(_) => RunnerError::Numeric(e.to_string()),
            EvalError::Lm(inner) => inner.into(),
            other => RunnerError::Config(other.to_string()),
        }
    }
}

/// Output root: explicit flag, then config, then the environment variable,
/// then `./runs`.
pub fn resolve_out_root(cli_out: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    if let Ok(env) = std::env::var(OUT_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

struct ResolvedData {
    edits: Vec<EditRequest>,
    pool_candidates: Vec<FactSentence>,
    references: BTreeMap<String, Vec<String>>,
    corpus: Vec<String>,
}

fn read_string_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        RunnerError::Config(format!("{} is not a JSON string list: {e}", path.display()))
    })
}

fn read_reference_map(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        RunnerError::Config(format!("{} is not a case → texts map: {e}", path.display()))
    })
}

/// True-fact sentences derivable from an edit set, for pre-training when
/// no checkpoint is supplied.
fn corpus_from_edits(edits: &[EditRequest]) -> Vec<String> {
    let mut corpus = Vec::new();
    for e in edits {
        corpus.push(format!("{} {}.", e.realized_prompt(), e.target_true));
        for p in &e.paraphrases {
            corpus.push(format!("{p} {}.", e.target_true));
        }
        for probe in &e.neighborhood_prompts {
            corpus.push(format!("{} {}.", probe.prompt, probe.expected));
        }
    }
    corpus
}

fn resolve_dataset(cfg: &RunConfig) -> Result<ResolvedData> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(params) => {
            let world = SynthWorld::generate(*params)?;
            Ok(ResolvedData {
                references: world.references(),
                corpus: world.corpus.clone(),
                pool_candidates: world.pool_facts.clone(),
                edits: world.edits,
            })
        }
        DatasetSpec::File { format, path } => {
            if !path.exists() {
                return Err(RunnerError::Config(format!(
                    "dataset path {} does not exist",
                    path.display()
                )));
            }
            let edits = load_dataset(path, *format)?;
            if edits.is_empty() {
                return Err(RunnerError::Config(format!(
                    "dataset {} holds no records",
                    path.display()
                )));
            }
            let pool_candidates = match &cfg.pool_path {
                Some(p) => read_string_list(p)?
                    .into_iter()
                    .map(FactSentence::new)
                    .collect(),
                None => fixtures::random_facts(),
            };
            let references = match &cfg.references_path {
                Some(p) => read_reference_map(p)?,
                None => BTreeMap::new(),
            };
            Ok(ResolvedData {
                corpus: corpus_from_edits(&edits),
                edits,
                pool_candidates,
                references,
            })
        }
    }
}

fn resolve_prefixes(cfg: &RunConfig) -> Result<ParaphrasePrefixSet> {
    match &cfg.prefixes_path {
        Some(p) => Ok(ParaphrasePrefixSet::new(read_string_list(p)?)),
        None => Ok(fixtures::paraphrase_prefixes()),
    }
}

/// Everything the vocabulary must cover beyond the corpus: edit prompts and
/// objects, probe texts, pool sentences, and (when used) prefixes.
fn vocab_texts(data: &ResolvedData, prefixes: Option<&ParaphrasePrefixSet>) -> Vec<String> {
    let mut texts = Vec::new();
    for e in &data.edits {
        texts.push(e.realized_prompt());
        texts.push(e.target_new.clone());
        texts.push(e.target_true.clone());
        texts.extend(e.paraphrases.iter().cloned());
        for p in &e.neighborhood_prompts {
            texts.push(p.prompt.clone());
            texts.push(p.expected.clone());
        }
    }
    for f in &data.pool_candidates {
        texts.push(f.text.clone());
    }
    if let Some(set) = prefixes {
        texts.extend(set.prefixes.iter().cloned());
    }
    for refs in data.references.values() {
        texts.extend(refs.iter().cloned());
    }
    texts
}

fn obtain_pre_model(
    cfg: &RunConfig,
    data: &ResolvedData,
    prefixes: Option<&ParaphrasePrefixSet>,
) -> Result<Model> {
    if let Some(path) = &cfg.model_checkpoint {
        let ckpt = load_checkpoint::<Scalar>(path)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let (model, _) = ckpt.into_model()?;
        return Ok(model);
    }
    let (model, _) = pretrain::<Scalar>(&data.corpus, &vocab_texts(data, prefixes), &cfg.pretrain)?;
    Ok(model)
}

/// Runs the factstore → editkit pipeline for every method in the grid and
/// writes one self-contained run directory per method under the out root.
pub fn cmd_edit(config_path: &Path, out_override: Option<&Path>) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config_path)?;
    let out_root = resolve_out_root(out_override, &cfg);
    std::fs::create_dir_all(&out_root)
        .map_err(|e| RunnerError::Config(format!("cannot create {}: {e}", out_root.display())))?;

    match cmd_edit_inner(&cfg, &out_root) {
        Ok(dirs) => Ok(dirs),
        Err(e) => {
            RunDir::new(&out_root).write_error("edit", &e.to_string());
            Err(e)
        }
    }
}

fn cmd_edit_inner(cfg: &RunConfig, out_root: &Path) -> Result<Vec<PathBuf>> {
    let data = resolve_dataset(cfg)?;
    let needs_prefixes = cfg.methods.iter().any(|m| m.uses_prefixes());
    let prefixes = if needs_prefixes {
        Some(resolve_prefixes(cfg)?)
    } else {
        None
    };
    let pre_model = obtain_pre_model(cfg, &data, prefixes.as_ref())?;
    let pre_bytes = serde_json::to_vec(&Checkpoint::from_model(&pre_model, None))
        .map_err(|e| RunnerError::Config(format!("serialize pre-edit checkpoint: {e}")))?;

    let needs_pool = cfg.methods.iter().any(|m| m.uses_random_facts());
    let pool = if needs_pool {
        Some(build_pool(
            &data.edits,
            &data.pool_candidates,
            cfg.editor.n_random_facts,
            cfg.seed,
        )?)
    } else {
        None
    };

    let mut dirs = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let dir = RunDir::new(out_root.join(method.tag()));
        std::fs::create_dir_all(&dir.path).map_err(|e| {
            RunnerError::Config(format!("cannot create {}: {e}", dir.path.display()))
        })?;
        let result = run_one_method(
            cfg,
            &data,
            pool.as_ref(),
            prefixes.as_ref(),
            &pre_bytes,
            &pre_model,
            method,
            &dir,
        );
        if let Err(e) = &result {
            dir.write_error("edit", &e.to_string());
        }
        result?;
        dirs.push(dir.path.clone());
    }
    Ok(dirs)
}

#[allow(clippy::too_many_arguments)]
fn run_one_method(
    cfg: &RunConfig,
    data: &ResolvedData,
    pool: Option<&crate::factstore::AugmentationPool>,
    prefixes: Option<&ParaphrasePrefixSet>,
    pre_bytes: &[u8],
    pre_model: &Model,
    method: crate::factstore::Method,
    dir: &RunDir,
) -> Result<()> {
    dir.write_snapshot(&cfg.snapshot)?;
    std::fs::write(dir.file(PRE_CHECKPOINT), pre_bytes)
        .map_err(|e| RunnerError::Config(format!("write {PRE_CHECKPOINT}: {e}")))?;

    let mut editor = cfg.editor.clone();
    editor.method = method;
    let pool_arg = method.uses_random_facts().then_some(pool).flatten();
    let prefix_arg = method.uses_prefixes().then_some(prefixes).flatten();
    let (post_model, mut run) = run_edit(
        pre_model.clone(),
        &data.edits,
        pool_arg,
        prefix_arg,
        &editor,
    )?;

    save_checkpoint(
        &dir.file(POST_CHECKPOINT),
        &Checkpoint::from_model(&post_model, None),
    )?;
    run.pre_model_ref = Some(PRE_CHECKPOINT.to_string());
    run.post_model_ref = Some(POST_CHECKPOINT.to_string());
    dir.write_run(&run)?;
    dir.write_json(
        LOSS_RECORD,
        &LossRecord {
            losses: run.loss_history.clone(),
            stopped_epoch: run.stopped_epoch,
        },
    )?;
    dir.write_json(
        TIMING_RECORD,
        &TimingRecord {
            wall_time_total_s: run.wall_time_per_edit * data.edits.len() as f64,
            wall_time_per_edit_s: run.wall_time_per_edit,
            n_edits: data.edits.len(),
        },
    )?;
    dir.write_edits(&data.edits)?;
    if !data.references.is_empty() {
        dir.write_references(&data.references)?;
    }
    dir.write_eval_options(&cfg.eval)?;
    Ok(())
}

/// Evaluates a completed run directory: writes per-case records and the
/// aggregate report. Idempotent — re-running overwrites identically.
pub fn cmd_eval(run_dir: &Path) -> Result<EvalReport> {
    let dir = RunDir::new(run_dir);
    let run = dir.read_run()?;
    let edits = dir.read_edits()?;
    let references = dir.read_references()?;
    let opts = dir.read_eval_options()?;
    let post_name = run
        .post_model_ref
        .as_deref()
        .unwrap_or(POST_CHECKPOINT)
        .to_string();
    let ckpt = load_checkpoint::<Scalar>(&dir.file(&post_name))
        .map_err(|e| RunnerError::Config(format!("incomplete run directory: {post_name}: {e}")))?;
    let (model, _) = ckpt.into_model()?;
    let run_ref = format!("{}-seed{}", run.config.method, run.config.seed);
    let (cases, report) = evaluate_model(&model, &edits, &opts, &references, &run_ref)?;
    dir.write_case_records(&cases)?;
    dir.write_report(&report)?;
    Ok(report)
}

/// Collects aggregate reports into one table. Every stored score is
/// re-derived from its decomposed metrics first; a disagreement above
/// 0.05 is an integrity error naming the run.
pub fn cmd_report(run_dirs: &[PathBuf], format: TableFormat) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(RunnerError::Usage("no run directories given".into()));
    }
    let mut rows = Vec::with_capacity(run_dirs.len());
    for path in run_dirs {
        let dir = RunDir::new(path);
        let report = dir.read_report()?;
        let run = dir.read_run()?;
        let timing = dir.read_timing()?;
        if let (Some(g), Some(l), Some(stored)) = (report.generality, report.locality, report.score)
        {
            let recomputed = harmonic_score(report.efficacy, g, l)
                .map_err(|e| RunnerError::Numeric(e.to_string()))?;
            if (recomputed - stored).abs() > 0.05 {
                return Err(RunnerError::Integrity(format!(
                    "{}: stored score {stored:.3} disagrees with recomputed {recomputed:.3}",
                    path.display()
                )));
            }
        }
        rows.push(ReportRow {
            method: run.config.method.tag().to_string(),
            score: report.score,
            efficacy: report.efficacy,
            generality: report.generality,
            locality: report.locality,
            fluency: report.fluency,
            consistency: report.consistency,
            time_per_edit_s: timing.wall_time_per_edit_s,
        });
    }
    Ok(render_table(&rows, format))
}

/// Fast end-to-end diagnostics: the gradient finite-difference check and
/// the metric oracles. Returns one line per check; any failure is a
/// numeric error.
pub fn selftest() -> Result<Vec<String>> {
    let mut lines = Vec::new();

    let reconstructed =
        harmonic_score::<f64>(99.6, 92.8, 74.6).map_err(|e| RunnerError::Numeric(e.to_string()))?;
    if (reconstructed - 87.7).abs() > 0.05 {
        return Err(RunnerError::Numeric(format!(
            "score reconstruction expected 87.7, got {reconstructed:.3}"
        )));
    }
    let second =
        harmonic_score::<f64>(98.9, 88.6, 73.7).map_err(|e| RunnerError::Numeric(e.to_string()))?;
    if (second - 85.8).abs() > 0.05 {
        return Err(RunnerError::Numeric(format!(
            "score reconstruction expected 85.8, got {second:.3}"
        )));
    }
    lines.push(format!(
        "score reconstruction: 87.7 -> {reconstructed:.3}, 85.8 -> {second:.3}"
    ));

    let fluency: f64 = ngram_entropy_fluency(&["a b c d e".to_string()]);
    let fluency_expect = 100.0 * (2.0 / 3.0 + 2.0 * 3.0f64.log2() / 3.0);
    if (fluency - fluency_expect).abs() > 1e-9 {
        return Err(RunnerError::Numeric(format!(
            "fluency oracle expected {fluency_expect:.6}, got {fluency:.6}"
        )));
    }
    lines.push(format!("fluency oracle: {fluency:.2} centibits"));

    let consistency: f64 = tfidf_consistency("x y", &["x z".to_string()]);
    let consistency_expect = 100.0 / (1.0 + (1.0 + 2.0f64.ln()).powi(2));
    if (consistency - consistency_expect).abs() > 1e-9 {
        return Err(RunnerError::Numeric(format!(
            "consistency oracle expected {consistency_expect:.6}, got {consistency:.6}"
        )));
    }
    lines.push(format!("consistency oracle: {consistency:.2}"));

    let corpus: Vec<String> = vec![
        "Alma lives in Oslo.".into(),
        "Boris lives in Lima.".into(),
        "Carla speaks Greek.".into(),
        "Dora plays violin.".into(),
    ];
    let cfg = PretrainConfig {
        arch: crate::lmcore::ModelConfig::tiny(),
        epochs: 5,
        batch_size: 4,
        lr: 2e-3,
        seed: 0,
    };
    let (mut model, _) = pretrain::<Scalar>(&corpus, &[], &cfg)?;
    let example = TrainingExample {
        prompt_text: "Alma lives in".into(),
        target_text: "Lima . Carla speaks Greek .".into(),
        origin_case_id: "selftest".into(),
        kind: crate::factstore::ExampleKind::EditConcat,
    };
    let err = finite_difference_check(&mut model, &example, 1e-4, 30, 0)?;
    if err >= 1e-4 {
        return Err(RunnerError::Numeric(format!(
            "gradient check relative error {err:.3e} exceeds 1e-4"
        )));
    }
    lines.push(format!("gradient check: max relative error {err:.3e}"));

    Ok(lines)
}
