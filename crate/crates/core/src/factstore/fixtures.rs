//! Bundled sample data: five records per dataset format, the paraphrase
//! prefix list, a generic pool of unrelated true facts, and reference
//! texts for the counterfact sample.

use std::collections::BTreeMap;

use super::dataset::{parse_dataset, DatasetFormat};
use super::{EditRequest, FactSentence, ParaphrasePrefixSet, Result};

pub const COUNTERFACT_SAMPLE: &str = include_str!("../../fixtures/counterfact_sample.json");
pub const ZSRE_SAMPLE: &str = include_str!("../../fixtures/zsre_sample.json");
pub const WIKIRECENT_SAMPLE: &str = include_str!("../../fixtures/wikirecent_sample.json");
pub const PARAPHRASE_PREFIXES: &str = include_str!("../../fixtures/paraphrase_prefixes.json");
pub const RANDOM_FACTS: &str = include_str!("../../fixtures/random_facts.json");
pub const COUNTERFACT_REFERENCES: &str = include_str!("../../fixtures/counterfact_references.json");

pub fn counterfact_sample() -> Result<Vec<EditRequest>> {
    parse_dataset(COUNTERFACT_SAMPLE, DatasetFormat::CounterFact)
}

pub fn zsre_sample() -> Result<Vec<EditRequest>> {
    parse_dataset(ZSRE_SAMPLE, DatasetFormat::Zsre)
}

pub fn wikirecent_sample() -> Result<Vec<EditRequest>> {
    parse_dataset(WIKIRECENT_SAMPLE, DatasetFormat::WikiRecent)
}

pub fn sample_for(format: DatasetFormat) -> Result<Vec<EditRequest>> {
    match format {
        DatasetFormat::CounterFact => counterfact_sample(),
        DatasetFormat::Zsre => zsre_sample(),
        DatasetFormat::WikiRecent => wikirecent_sample(),
    }
}

/// The fixed paraphrase-prefix list used by the `_p` method variants.
pub fn paraphrase_prefixes() -> ParaphrasePrefixSet {
    let prefixes: Vec<String> =
        serde_json::from_str(PARAPHRASE_PREFIXES).expect("bundled prefix list parses");
    ParaphrasePrefixSet::new(prefixes)
}

/// Generic unrelated true facts, the default pool for file-based datasets.
pub fn random_facts() -> Vec<FactSentence> {
    let texts: Vec<String> = serde_json::from_str(RANDOM_FACTS).expect("bundled fact list parses");
    texts.into_iter().map(FactSentence::new).collect()
}

/// Reference texts (case id → texts about subjects sharing the target
/// property) for the counterfact sample.
pub fn counterfact_references() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(COUNTERFACT_REFERENCES).expect("bundled reference map parses")
}
