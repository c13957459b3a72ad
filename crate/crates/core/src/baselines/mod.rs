//! Reference baselines: binary relevance over bag-of-words features and the
//! named configuration presets for the neural comparisons.

mod br;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use br::{
    br_evaluate, br_predict, br_train, br_train_with_labels, BrConfig, BrModel,
    KIND_BINARY_RELEVANCE,
};

use crate::error::{Error, Result};
use crate::model::{Head, Variant};
use crate::training::TrainConfig;

/// Named experiment configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Seq2seq,
    Seq2setFull,
    Seq2setSimplified,
    Br,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Seq2seq,
        Preset::Seq2setFull,
        Preset::Seq2setSimplified,
        Preset::Br,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Seq2seq => "seq2seq",
            Preset::Seq2setFull => "seq2set_full",
            Preset::Seq2setSimplified => "seq2set_simplified",
            Preset::Br => "br",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown preset `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Corpus style selecting the reward weight of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusStyle {
    /// News topics with a meaningful frequency order (lambda 0.80).
    #[default]
    Rcv1,
    /// Academic subjects (lambda 0.95).
    Aapd,
}

impl CorpusStyle {
    pub fn lambda(self) -> f64 {
        match self {
            CorpusStyle::Rcv1 => 0.80,
            CorpusStyle::Aapd => 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PresetConfig {
    Neural(TrainConfig),
    BinaryRelevance(BrConfig),
}

impl PresetConfig {
    pub fn neural(self) -> Option<TrainConfig> {
        match self {
            PresetConfig::Neural(c) => Some(c),
            PresetConfig::BinaryRelevance(_) => None,
        }
    }
}

/// Training configuration of a named preset, RCV1 style.
pub fn preset(name: &str) -> Result<PresetConfig> {
    Ok(preset_config(name.parse()?, CorpusStyle::Rcv1))
}

/// Training configuration of `preset` in the given corpus style. Neural
/// presets keep the default optimization settings and differ only in the
/// objective and decoding head.
pub fn preset_config(preset: Preset, style: CorpusStyle) -> PresetConfig {
    let base = TrainConfig::default();
    match preset {
        Preset::Seq2seq => PresetConfig::Neural(TrainConfig {
            lambda: 0.0,
            variant: Variant::Full,
            head: Head::Sequence,
            ..base
        }),
        Preset::Seq2setFull => PresetConfig::Neural(TrainConfig {
            lambda: style.lambda(),
            variant: Variant::Full,
            head: Head::Set,
            ..base
        }),
        Preset::Seq2setSimplified => PresetConfig::Neural(TrainConfig {
            lambda: 1.0,
            variant: Variant::Simplified,
            head: Head::Set,
            ..base
        }),
        Preset::Br => PresetConfig::BinaryRelevance(BrConfig::default()),
    }
}
