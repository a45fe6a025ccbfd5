//! Text metrics: harmonic editing score, n-gram entropy fluency, and
//! unigram TF-IDF consistency. All maps are ordered so identical inputs
//! give bit-identical outputs.

use std::collections::BTreeMap;

use super::{EvalError, Result};
use crate::lmcore::split_words;
use crate::num::{real, Real};

/// Harmonic mean of the three editing percentages; 0 if any input is 0.
pub fn harmonic_score<F: Real>(efficacy: F, generality: F, locality: F) -> Result<F> {
    let hundred = real::<F>(100.0);
    for (name, v) in [
        ("efficacy", efficacy),
        ("generality", generality),
        ("locality", locality),
    ] {
        if !(v >= F::zero() && v <= hundred) {
            return Err(EvalError::Domain(format!("{name} {v} outside [0, 100]")));
        }
    }
    if efficacy.is_zero() || generality.is_zero() || locality.is_zero() {
        return Ok(F::zero());
    }
    Ok(real::<F>(3.0) / (efficacy.recip() + generality.recip() + locality.recip()))
}

fn entropy_bits<F: Real, K: Ord>(counts: &BTreeMap<K, usize>) -> F {
    let total: usize = counts.values().sum();
    if total == 0 {
        return F::zero();
    }
    let total = real::<F>(total as f64);
    let mut h = F::zero();
    for &c in counts.values() {
        let p = real::<F>(c as f64) / total;
        h -= p * p.log2();
    }
    h
}

/// Weighted n-gram entropy of the concatenated token stream, in centibits:
/// 100 · (H₂/3 + 2·H₃/3) with base-2 bigram and trigram entropies. Returns
/// 0 when the stream has fewer than 3 whitespace tokens.
pub fn ngram_entropy_fluency<F: Real>(texts: &[String]) -> F {
    let tokens: Vec<&str> = texts.iter().flat_map(|t| t.split_whitespace()).collect();
    if tokens.len() < 3 {
        return F::zero();
    }
    let mut bigrams: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for w in tokens.windows(2) {
        *bigrams.entry((w[0], w[1])).or_insert(0) += 1;
    }
    let mut trigrams: BTreeMap<(&str, &str, &str), usize> = BTreeMap::new();
    for w in tokens.windows(3) {
        *trigrams.entry((w[0], w[1], w[2])).or_insert(0) += 1;
    }
    let h2 = entropy_bits::<F, _>(&bigrams);
    let h3 = entropy_bits::<F, _>(&trigrams);
    let third = real::<F>(3.0).recip();
    real::<F>(100.0) * (h2 * third + real::<F>(2.0) * h3 * third)
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for tok in split_words(text) {
        if tok.chars().all(|c| !c.is_alphanumeric()) {
            continue;
        }
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

/// Cosine similarity (×100) between the unigram TF-IDF vectors of the
/// generated text and the concatenated references. Term frequency is the
/// raw count; idf(t) = 1 + ln(N / df(t)) over the corpus {generated} ∪
/// references. 0 when either vector is zero or no references exist.
pub fn tfidf_consistency<F: Real>(generated: &str, references: &[String]) -> F {
    if references.is_empty() {
        return F::zero();
    }
    let gen_counts = term_counts(generated);
    let ref_counts: Vec<BTreeMap<String, usize>> =
        references.iter().map(|r| term_counts(r)).collect();

    let n_docs = 1 + references.len();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for term in gen_counts.keys() {
        *df.entry(term.as_str()).or_insert(0) += 1;
    }
    for doc in &ref_counts {
        for term in doc.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let idf = |term: &str| -> F {
        let d = df[term] as f64;
        real::<F>(1.0 + (n_docs as f64 / d).ln())
    };

    let mut joined: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &ref_counts {
        for (term, &c) in doc {
            *joined.entry(term.as_str()).or_insert(0) += c;
        }
    }

    let mut dot = F::zero();
    let mut norm_a = F::zero();
    for (term, &c) in &gen_counts {
        let w = real::<F>(c as f64) * idf(term);
        norm_a += w * w;
        if let Some(&rc) = joined.get(term.as_str()) {
            dot += w * real::<F>(rc as f64) * idf(term);
        }
    }
    let mut norm_b = F::zero();
    for (term, &c) in &joined {
        let w = real::<F>(c as f64) * idf(term);
        norm_b += w * w;
    }
    if norm_a.is_zero() || norm_b.is_zero() {
        return F::zero();
    }
    real::<F>(100.0) * dot / (norm_a.sqrt() * norm_b.sqrt())
}
