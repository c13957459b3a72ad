//! Corpora, vocabularies, label ordering, and the dataset transformations
//! used by the label-order experiments.
//!
//! # Corpus format
//!
//! A corpus is a UTF-8 file of newline-delimited JSON objects, one sample
//! per line:
//!
//! ```text
//! {"id": "d17", "text": "stocks fell sharply", "labels": ["C15", "M14"]}
//! ```
//!
//! * `id` (string, optional): assigned as the zero-based record position
//!   when absent; must be unique within the file.
//! * `text` (string): whitespace-pretokenized text.
//! * `labels` (array of strings): non-empty; the array order is the stored
//!   label order. Repeated labels are collapsed to their first occurrence.
//!
//! Blank lines are skipped. Unknown fields are rejected.

mod corpus;
mod synth;
mod transform;
mod vocab;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use corpus::{load_corpus, save_corpus, write_provenance, Provenance};
pub use synth::{synth_generate, Correlation, SynthCorpus, SynthSpec};
pub use transform::{
    filter_long, order_labels, phi_coefficient, remove_top_k, shuffle_labels, split,
    uncorrelated_subset, FilterReport, LabelOrderPolicy, SplitRatios, Uncorrelated,
    DEFAULT_MAX_CORR, DEFAULT_MAX_WORDS,
};
pub use vocab::{LabelVocab, Vocabulary};

use crate::error::{Error, Result};

/// One text with its labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: Vec<String>,
    /// Label set, kept in the order it arrived.
    pub labels: Vec<String>,
    /// The label sequence the decoder is trained on; a permutation of
    /// `labels`.
    pub ordered_labels: Vec<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: Vec<String>, labels: Vec<String>) -> Result<Self> {
        let mut uniq: Vec<String> = Vec::with_capacity(labels.len());
        for l in labels {
            if !uniq.contains(&l) {
                uniq.push(l);
            }
        }
        if uniq.is_empty() {
            return Err(Error::InvalidArgument("sample has no labels".into()));
        }
        Ok(Sample {
            id: id.into(),
            text,
            ordered_labels: uniq.clone(),
            labels: uniq,
        })
    }

    pub fn from_text(id: impl Into<String>, text: &str, labels: &[&str]) -> Result<Self> {
        Self::new(
            id,
            text.split_whitespace().map(String::from).collect(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
    }
}

/// Per-label occurrence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFrequencies {
    counts: HashMap<String, usize>,
}

impl LabelFrequencies {
    pub fn count(samples: &[Sample]) -> Self {
        let mut counts = HashMap::new();
        for s in samples {
            for l in &s.labels {
                *counts.entry(l.clone()).or_default() += 1;
            }
        }
        LabelFrequencies { counts }
    }

    pub fn get(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Labels by descending count, ties by ascending name.
    pub fn ranked(&self) -> Vec<(String, usize)> {
        let mut v: Vec<(String, usize)> =
            self.counts.iter().map(|(k, &c)| (k.clone(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// Summary statistics of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub distinct_labels: usize,
    pub distinct_tokens: usize,
    pub mean_words: f64,
    pub mean_labels: f64,
    pub max_labels: usize,
    pub max_words: usize,
}

impl CorpusStats {
    pub fn of(samples: &[Sample]) -> Self {
        let n = samples.len().max(1) as f64;
        let tokens: std::collections::HashSet<&str> = samples
            .iter()
            .flat_map(|s| s.text.iter().map(String::as_str))
            .collect();
        CorpusStats {
            samples: samples.len(),
            distinct_labels: LabelFrequencies::count(samples).len(),
            distinct_tokens: tokens.len(),
            mean_words: samples.iter().map(|s| s.text.len()).sum::<usize>() as f64 / n,
            mean_labels: samples.iter().map(|s| s.labels.len()).sum::<usize>() as f64 / n,
            max_labels: samples.iter().map(|s| s.labels.len()).max().unwrap_or(0),
            max_words: samples.iter().map(|s| s.text.len()).max().unwrap_or(0),
        }
    }
}
