//! Adapters from the three dataset record formats into [`EditRequest`].
//!
//! All formats normalize into the same schema. Fields a format lacks
//! become empty lists; evaluation probes are never synthesized.

use std::path::Path;

use serde_json::Value;

use super::{EditRequest, FactStoreError, NeighborhoodProbe, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    CounterFact,
    Zsre,
    WikiRecent,
}

impl DatasetFormat {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "counterfact" => Ok(DatasetFormat::CounterFact),
            "zsre" => Ok(DatasetFormat::Zsre),
            "wikirecent" => Ok(DatasetFormat::WikiRecent),
            other => Err(FactStoreError::UnknownFormat(other.to_string())),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DatasetFormat::CounterFact => "counterfact",
            DatasetFormat::Zsre => "zsre",
            DatasetFormat::WikiRecent => "wikirecent",
        }
    }
}

/// Loads a record-list dataset file (a JSON array of records in the named
/// format) into edit requests, one per record.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<EditRequest>> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, format)
}

/// Same as [`load_dataset`] but from in-memory text.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<EditRequest>> {
    let root: Value = serde_json::from_str(text)?;
    let records = root.as_array().ok_or_else(|| FactStoreError::Parse {
        index: 0,
        message: "expected a top-level JSON array of records".into(),
    })?;
    let mut out = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let edit = match format {
            DatasetFormat::CounterFact => parse_counterfact(index, record),
            DatasetFormat::Zsre => parse_zsre(index, record),
            DatasetFormat::WikiRecent => parse_wikirecent(index, record),
        }?;
        edit.validate().map_err(|e| FactStoreError::Parse {
            index,
            message: e.to_string(),
        })?;
        out.push(edit);
    }
    Ok(out)
}

fn field<'a>(index: usize, record: &'a Value, name: &str) -> Result<&'a Value> {
    record.get(name).ok_or_else(|| FactStoreError::Parse {
        index,
        message: format!("missing field {name:?}"),
    })
}

fn string_field(index: usize, record: &Value, name: &str) -> Result<String> {
    field(index, record, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| FactStoreError::Parse {
            index,
            message: format!("field {name:?} is not a string"),
        })
}

fn optional_string_list(record: &Value, name: &str) -> Vec<String> {
    record
        .get(name)
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

/// Turns a realized prompt back into a template by replacing the first
/// occurrence of the subject with the placeholder.
fn templatize(index: usize, prompt: &str, subject: &str, field_name: &str) -> Result<String> {
    if subject.is_empty() || !prompt.contains(subject) {
        return Err(FactStoreError::Parse {
            index,
            message: format!("field {field_name:?} does not mention the subject {subject:?}"),
        });
    }
    Ok(prompt.replacen(subject, "{}", 1))
}

fn parse_counterfact(index: usize, record: &Value) -> Result<EditRequest> {
    let rewrite = field(index, record, "requested_rewrite")?;
    let case_id = match record.get("case_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(FactStoreError::Parse {
                index,
                message: "missing field \"case_id\"".into(),
            })
        }
    };
    let target_new = string_field(index, field(index, rewrite, "target_new")?, "str")?;
    let target_true = string_field(index, field(index, rewrite, "target_true")?, "str")?;
    let target_true_for_probes = target_true.clone();
    let neighborhood = optional_string_list(record, "neighborhood_prompts")
        .into_iter()
        .map(|prompt| NeighborhoodProbe {
            prompt,
            expected: target_true_for_probes.clone(),
        })
        .collect();
    Ok(EditRequest {
        case_id,
        subject: string_field(index, rewrite, "subject")?,
        prompt_template: string_field(index, rewrite, "prompt")?,
        relation_id: string_field(index, rewrite, "relation_id")?,
        target_new,
        target_true,
        paraphrases: optional_string_list(record, "paraphrase_prompts"),
        neighborhood_prompts: neighborhood,
    })
}

fn parse_zsre(index: usize, record: &Value) -> Result<EditRequest> {
    let subject = string_field(index, record, "subject")?;
    let src = string_field(index, record, "src")?;
    let answers = optional_string_list(record, "answers");
    let target_true = answers
        .first()
        .cloned()
        .ok_or_else(|| FactStoreError::Parse {
            index,
            message: "missing field \"answers\" (need at least one answer)".into(),
        })?;
    let mut paraphrases = Vec::new();
    if let Some(rephrase) = record.get("rephrase").and_then(Value::as_str) {
        if !rephrase.is_empty() {
            paraphrases.push(rephrase.to_string());
        }
    }
    let mut neighborhood = Vec::new();
    if let (Some(loc), Some(loc_ans)) = (
        record.get("loc").and_then(Value::as_str),
        record.get("loc_ans").and_then(Value::as_str),
    ) {
        neighborhood.push(NeighborhoodProbe {
            prompt: loc.to_string(),
            expected: loc_ans.to_string(),
        });
    }
    Ok(EditRequest {
        case_id: format!("zsre-{index}"),
        prompt_template: templatize(index, &src, &subject, "src")?,
        subject,
        relation_id: String::new(),
        target_new: string_field(index, record, "alt")?,
        target_true,
        paraphrases,
        neighborhood_prompts: neighborhood,
    })
}

fn parse_wikirecent(index: usize, record: &Value) -> Result<EditRequest> {
    let subject = string_field(index, record, "subject")?;
    let prompt = string_field(index, record, "prompt")?;
    let neighborhood = record
        .get("locality")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|item| {
                    let prompt = item.get("prompt")?.as_str()?;
                    let expected = item.get("ground_truth")?.as_str()?;
                    Some(NeighborhoodProbe {
                        prompt: prompt.to_string(),
                        expected: expected.to_string(),
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(EditRequest {
        case_id: match record.get("case_id").and_then(Value::as_str) {
            Some(s) => s.to_string(),
            None => format!("wikirecent-{index}"),
        },
        prompt_template: templatize(index, &prompt, &subject, "prompt")?,
        subject,
        relation_id: String::new(),
        target_new: string_field(index, record, "target_new")?,
        target_true: string_field(index, record, "target_true")?,
        paraphrases: optional_string_list(record, "paraphrase"),
        neighborhood_prompts: neighborhood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factstore::fixtures;

    #[test]
    fn empty_record_list_gives_empty_output() {
        assert!(parse_dataset("[]", DatasetFormat::CounterFact)
            .unwrap()
            .is_empty());
        assert!(parse_dataset("[]", DatasetFormat::Zsre).unwrap().is_empty());
        assert!(parse_dataset("[]", DatasetFormat::WikiRecent)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn counterfact_fixture_loads_five_records() {
        let edits = fixtures::counterfact_sample().unwrap();
        assert_eq!(edits.len(), 5);
        let first = &edits[0];
        assert_eq!(first.subject, "Danielle Darrieux");
        assert_eq!(
            first.realized_prompt(),
            "The mother tongue of Danielle Darrieux is"
        );
        assert_eq!(first.target_new, "English");
        assert_eq!(first.target_true, "French");
        assert!(!first.paraphrases.is_empty());
        assert!(first
            .neighborhood_prompts
            .iter()
            .all(|p| p.expected == "French"));
    }

    #[test]
    fn zsre_fixture_loads_five_records() {
        let edits = fixtures::zsre_sample().unwrap();
        assert_eq!(edits.len(), 5);
        for (i, e) in edits.iter().enumerate() {
            assert_eq!(e.case_id, format!("zsre-{i}"));
            assert_eq!(e.prompt_template.matches("{}").count(), 1);
            assert_eq!(e.paraphrases.len(), 1);
            assert_eq!(e.neighborhood_prompts.len(), 1);
        }
    }

    #[test]
    fn wikirecent_fixture_loads_five_records() {
        let edits = fixtures::wikirecent_sample().unwrap();
        assert_eq!(edits.len(), 5);
        for e in &edits {
            assert_ne!(e.target_new, e.target_true);
        }
        assert!(edits.iter().any(|e| !e.neighborhood_prompts.is_empty()));
    }

    #[test]
    fn malformed_record_names_index_and_field() {
        let text = r#"[{"case_id": "x", "requested_rewrite": {"subject": "A"}}]"#;
        let err = parse_dataset(text, DatasetFormat::CounterFact).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 0"), "{msg}");
        assert!(msg.contains("target_new"), "{msg}");
    }

    #[test]
    fn zsre_subject_must_appear_in_question() {
        let text = r#"[{"subject": "Watt", "src": "Who invented the lamp?",
                        "rephrase": "r", "answers": ["Edison"], "alt": "Tesla",
                        "loc": "l", "loc_ans": "a"}]"#;
        let err = parse_dataset(text, DatasetFormat::Zsre).unwrap_err();
        assert!(err.to_string().contains("subject"), "{err}");
    }

    #[test]
    fn unknown_format_tag_is_usage_error() {
        let err = DatasetFormat::parse("mquake").unwrap_err();
        assert!(matches!(err, FactStoreError::UnknownFormat(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/ds.json"), DatasetFormat::Zsre).unwrap_err();
        assert!(matches!(err, FactStoreError::Io(_)));
    }
}
