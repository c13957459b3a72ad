//! Checkpoint directories.
//!
//! ```text
//! <dir>/meta.json      kind tag, kind-specific config, vocabulary hashes,
//!                      training step, validation micro-F1
//! <dir>/manifest.json  [{name, shape, offset, len}], offsets in bytes
//! <dir>/params.bin     concatenated f32 little-endian arrays
//! <dir>/vocab.json     word vocabulary tokens by id
//! <dir>/labels.json    label names by id
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::{LabelVocab, Vocabulary};
use crate::diffmath::{Array, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const KIND_SEQ2SET: &str = "seq2set";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub format: u32,
    pub config: serde_json::Value,
    pub vocab_sha256: String,
    pub label_vocab_sha256: String,
    pub step: usize,
    pub val_micro_f1: Option<f64>,
    /// Decode length bound used during training.
    #[serde(default)]
    pub max_len: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// SHA-256 of the resolved run configuration.
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub vocab: Vocabulary,
    pub labels: LabelVocab,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        vocab: &Vocabulary,
        labels: &LabelVocab,
        step: usize,
        val_micro_f1: Option<f64>,
    ) -> Result<Self> {
        if vocab.len() != model.config().vocab_size || labels.len() != model.num_labels() {
            return Err(Error::VocabMismatch(
                "vocabulary sizes differ from the model configuration".into(),
            ));
        }
        Ok(Checkpoint {
            meta: CheckpointMeta {
                kind: KIND_SEQ2SET.into(),
                format: CHECKPOINT_FORMAT,
                config: serde_json::to_value(model.config())?,
                vocab_sha256: vocab.sha256(),
                label_vocab_sha256: labels.sha256(),
                step,
                val_micro_f1,
                max_len: None,
                seed: None,
                config_hash: None,
            },
            vocab: vocab.clone(),
            labels: labels.clone(),
            params: model.params().clone(),
        })
    }

    /// Rebuilds the model, verifying every parameter name and shape.
    pub fn to_model(&self) -> Result<Model<f32>> {
        if self.meta.kind != KIND_SEQ2SET {
            return Err(Error::Checkpoint(format!(
                "expected a `{KIND_SEQ2SET}` checkpoint, found `{}`",
                self.meta.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(self.meta.config.clone())?;
        if config.vocab_size != self.vocab.len() || config.num_labels != self.labels.len() {
            return Err(Error::Checkpoint(
                "stored vocabularies disagree with the stored configuration".into(),
            ));
        }
        Model::from_params(config, self.params.clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.params.num_values() * 4);
        let mut manifest = Vec::with_capacity(self.params.len());
        for (_, name, a) in self.params.iter() {
            manifest.push(ManifestEntry {
                name: name.to_string(),
                shape: a.shape().to_vec(),
                offset: blob.len(),
                len: a.len(),
            });
            for v in a.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join("params.bin"), blob)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        fs::write(
            dir.join("meta.json"),
            serde_json::to_vec_pretty(&self.meta)?,
        )?;
        fs::write(
            dir.join("vocab.json"),
            serde_json::to_vec(self.vocab.tokens())?,
        )?;
        fs::write(
            dir.join("labels.json"),
            serde_json::to_vec(self.labels.names())?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<u8>> {
            fs::read(dir.join(name))
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(name).display())))
        };
        let meta: CheckpointMeta = serde_json::from_slice(&read("meta.json")?)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {}",
                meta.format
            )));
        }
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&read("manifest.json")?)?;
        let blob = read("params.bin")?;
        let vocab = Vocabulary::from_tokens(serde_json::from_slice(&read("vocab.json")?)?)?;
        let labels = LabelVocab::from_names(serde_json::from_slice(&read("labels.json")?)?)?;
        if vocab.sha256() != meta.vocab_sha256 {
            return Err(Error::Checkpoint("word vocabulary hash mismatch".into()));
        }
        if labels.sha256() != meta.label_vocab_sha256 {
            return Err(Error::Checkpoint("label vocabulary hash mismatch".into()));
        }

        let mut params = ParamSet::new();
        let mut expected_offset = 0;
        for e in &manifest {
            if e.shape.iter().product::<usize>() != e.len || e.offset != expected_offset {
                return Err(Error::Checkpoint(format!(
                    "inconsistent manifest entry `{}`",
                    e.name
                )));
            }
            let end = e.offset + 4 * e.len;
            let bytes = blob
                .get(e.offset..end)
                .ok_or_else(|| Error::Checkpoint(format!("blob too short for `{}`", e.name)))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.add(e.name.clone(), Array::new(e.shape.clone(), data)?)?;
            expected_offset = end;
        }
        if expected_offset != blob.len() {
            return Err(Error::Checkpoint("trailing bytes in parameter blob".into()));
        }
        Ok(Checkpoint {
            meta,
            vocab,
            labels,
            params,
        })
    }
}
