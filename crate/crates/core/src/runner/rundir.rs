//! Run-directory layout and JSON record I/O.
//!
//! A run directory is self-contained: the config snapshot, both
//! checkpoints, the loss/timing records, the edit set, reference texts,
//! and evaluation options all live inside it, so evaluation works from a
//! copied directory with no other state.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::editkit::EditRun;
use crate::evalsuite::{CaseResult, EvalOptions, EvalReport};
use crate::factstore::EditRequest;

use super::{Result, RunnerError};

pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const PRE_CHECKPOINT: &str = "pre_model.json";
pub const POST_CHECKPOINT: &str = "post_model.json";
pub const RUN_RECORD: &str = "run.json";
pub const LOSS_RECORD: &str = "losses.json";
pub const TIMING_RECORD: &str = "timing.json";
pub const EDITS_FILE: &str = "edits.json";
pub const REFERENCES_FILE: &str = "references.json";
pub const EVAL_OPTIONS_FILE: &str = "eval.json";
pub const CASE_RECORDS: &str = "case_results.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const ERROR_RECORD: &str = "error.json";

/// Wall-clock record; kept separate from the metric report so reports stay
/// byte-reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub wall_time_total_s: f64,
    pub wall_time_per_edit_s: f64,
    pub n_edits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub losses: Vec<f64>,
    pub stopped_epoch: usize,
}

/// Machine-readable failure record left behind by a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub message: String,
}

/// Typed view of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| RunnerError::Config(format!("serialize {name}: {e}")))?;
        fs::write(self.file(name), text + "\n")
            .map_err(|e| RunnerError::Config(format!("write {name}: {e}")))?;
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = self.file(name);
        let text = fs::read_to_string(&path).map_err(|e| {
            RunnerError::Config(format!("incomplete run directory, {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| RunnerError::Config(format!("corrupt {name}: {e}")))
    }

    pub fn write_snapshot(&self, text: &str) -> Result<()> {
        fs::write(self.file(CONFIG_SNAPSHOT), text)
            .map_err(|e| RunnerError::Config(format!("write {CONFIG_SNAPSHOT}: {e}")))?;
        Ok(())
    }

    pub fn write_run(&self, run: &EditRun) -> Result<()> {
        self.write_json(RUN_RECORD, run)
    }

    pub fn read_run(&self) -> Result<EditRun> {
        self.read_json(RUN_RECORD)
    }

    pub fn write_edits(&self, edits: &[EditRequest]) -> Result<()> {
        self.write_json(EDITS_FILE, &edits)
    }

    pub fn read_edits(&self) -> Result<Vec<EditRequest>> {
        self.read_json(EDITS_FILE)
    }

    pub fn write_references(&self, refs: &BTreeMap<String, Vec<String>>) -> Result<()> {
        self.write_json(REFERENCES_FILE, refs)
    }

    pub fn read_references(&self) -> Result<BTreeMap<String, Vec<String>>> {
        if self.file(REFERENCES_FILE).exists() {
            self.read_json(REFERENCES_FILE)
        } else {
            Ok(BTreeMap::new())
        }
    }

    pub fn write_eval_options(&self, opts: &EvalOptions) -> Result<()> {
        self.write_json(EVAL_OPTIONS_FILE, opts)
    }

    pub fn read_eval_options(&self) -> Result<EvalOptions> {
        self.read_json(EVAL_OPTIONS_FILE)
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<()> {
        self.write_json(REPORT_FILE, report)
    }

    pub fn read_report(&self) -> Result<EvalReport> {
        self.read_json(REPORT_FILE)
    }

    pub fn read_timing(&self) -> Result<TimingRecord> {
        self.read_json(TIMING_RECORD)
    }

    /// Line-delimited case records, one JSON object per case.
    pub fn write_case_records(&self, cases: &[CaseResult]) -> Result<()> {
        let path = self.file(CASE_RECORDS);
        let mut out = fs::File::create(&path)
            .map_err(|e| RunnerError::Config(format!("write {CASE_RECORDS}: {e}")))?;
        for case in cases {
            let line = serde_json::to_string(case)
                .map_err(|e| RunnerError::Config(format!("serialize case record: {e}")))?;
            writeln!(out, "{line}")
                .map_err(|e| RunnerError::Config(format!("write {CASE_RECORDS}: {e}")))?;
        }
        Ok(())
    }

    pub fn read_case_records(&self) -> Result<Vec<CaseResult>> {
        let path = self.file(CASE_RECORDS);
        let text = fs::read_to_string(&path).map_err(|e| {
            RunnerError::Config(format!("incomplete run directory, {}: {e}", path.display()))
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                serde_json::from_str(line)
                    .map_err(|e| RunnerError::Config(format!("corrupt case record: {e}")))
            })
            .collect()
    }

    /// Best-effort failure marker; errors while writing it are swallowed.
    pub fn write_error(&self, stage: &str, message: &str) {
        let _ = fs::create_dir_all(&self.path);
        let record = ErrorRecord {
            stage: stage.to_string(),
            message: message.to_string(),
        };
        if let Ok(text) = serde_json::to_string_pretty(&record) {
            let _ = fs::write(self.file(ERROR_RECORD), text + "\n");
        }
    }
}
