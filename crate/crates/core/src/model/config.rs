use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the sequence decoder is present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Encoder, sequence decoder and set decoder.
    #[default]
    Full,
    /// Encoder and set decoder only.
    Simplified,
}

/// Which decoder produces the final labels at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// The MLE-trained sequence decoder (used by the Seq2Seq baseline).
    Sequence,
    /// The RL-trained set decoder.
    #[default]
    Set,
}

/// Layer counts and sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub vocab_cap: usize,
    pub embed_size: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    /// Extent of the attention alignment space.
    pub attention_size: usize,
}

impl ArchConfig {
    /// Large-corpus setting (news topics, 103 labels).
    pub fn rcv1() -> Self {
        ArchConfig {
            vocab_cap: 50_000,
            embed_size: 256,
            encoder_layers: 2,
            encoder_hidden: 256,
            decoder_layers: 3,
            decoder_hidden: 512,
            attention_size: 512,
        }
    }

    /// Academic-abstract setting (54 subjects).
    pub fn aapd() -> Self {
        ArchConfig {
            vocab_cap: 30_000,
            embed_size: 256,
            encoder_layers: 2,
            encoder_hidden: 256,
            decoder_layers: 2,
            decoder_hidden: 512,
            attention_size: 512,
        }
    }

    /// Small setting that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        ArchConfig {
            vocab_cap: 2_000,
            embed_size: 32,
            encoder_layers: 1,
            encoder_hidden: 32,
            decoder_layers: 1,
            decoder_hidden: 48,
            attention_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("embed_size", self.embed_size),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_layers", self.decoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_size", self.attention_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!(
                    "architecture.{name} must be positive"
                )));
            }
        }
        if self.vocab_cap < crate::data::Vocabulary::RESERVED {
            return Err(Error::Config(format!(
                "architecture.vocab_cap must be at least {}",
                crate::data::Vocabulary::RESERVED
            )));
        }
        Ok(())
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::desk()
    }
}

/// Everything needed to lay out a model's parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    /// Word vocabulary size including reserved symbols.
    pub vocab_size: usize,
    /// Number of real labels `L`.
    pub num_labels: usize,
    pub variant: Variant,
    pub head: Head,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.vocab_size < crate::data::Vocabulary::RESERVED {
            return Err(Error::Config("vocabulary smaller than reserved set".into()));
        }
        if self.num_labels == 0 {
            return Err(Error::Config("empty label vocabulary".into()));
        }
        if self.variant == Variant::Simplified && self.head == Head::Sequence {
            return Err(Error::Config(
                "the simplified variant has no sequence decoder to decode from".into(),
            ));
        }
        Ok(())
    }
}
