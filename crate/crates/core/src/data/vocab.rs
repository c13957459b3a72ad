use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::Sample;
use crate::error::{Error, Result};

/// Word vocabulary. Ids are dense from 0; the first four are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const RESERVED: usize = 4;
    const RESERVED_TOKENS: [&'static str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

    /// Keeps the `cap - 4` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build(samples: &[Sample], cap: usize) -> Result<Self> {
        if cap < Self::RESERVED {
            return Err(Error::InvalidArgument(format!(
                "vocabulary cap {cap} cannot hold the {} reserved symbols",
                Self::RESERVED
            )));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            for t in &s.text {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, _)| !Self::RESERVED_TOKENS.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - Self::RESERVED);

        let mut tokens: Vec<String> = Self::RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut counts = vec![0; Self::RESERVED];
        for (t, c) in ranked {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::RESERVED
            || tokens[..Self::RESERVED]
                .iter()
                .zip(Self::RESERVED_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad>, <unk>, <bos>, <eos>".into(),
            ));
        }
        let n = tokens.len();
        let v = Self::from_parts(tokens, vec![0; n]);
        if v.index.len() != n {
            return Err(Error::InvalidArgument("vocabulary repeats a token".into()));
        }
        Ok(v)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// Ids for `text`; out-of-vocabulary tokens map to unk.
    pub fn encode(&self, text: &[String]) -> Vec<usize> {
        text.iter().map(|t| self.id(t)).collect()
    }

    pub fn sha256(&self) -> String {
        hash_tokens(&self.tokens)
    }
}

/// The real labels of a dataset, `0..L`, most frequent first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    /// Labels of `samples` by descending frequency, ties by ascending name.
    pub fn build(samples: &[Sample]) -> Result<Self> {
        let freqs = super::LabelFrequencies::count(samples);
        let names = freqs
            .ranked()
            .into_iter()
            .map(|(n, _)| n)
            .collect::<Vec<_>>();
        Self::from_names(names)
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("empty label vocabulary".into()));
        }
        let index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        if index.len() != names.len() {
            return Err(Error::InvalidArgument(
                "label vocabulary repeats a label".into(),
            ));
        }
        Ok(LabelVocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Ids of `labels` in the given order; unknown labels are an error.
    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.id(l)
                    .ok_or_else(|| Error::VocabMismatch(format!("unknown label `{l}`")))
            })
            .collect()
    }

    pub fn sha256(&self) -> String {
        hash_tokens(&self.names)
    }
}

fn hash_tokens(tokens: &[String]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
