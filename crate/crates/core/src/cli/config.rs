use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{preset_config, CorpusStyle, Preset, PresetConfig};
use crate::data::{
    remove_top_k, shuffle_labels, uncorrelated_subset, LabelOrderPolicy, Sample, DEFAULT_MAX_WORDS,
};
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::training::TrainConfig;

/// A complete run description, read from TOML.
///
/// ```toml
/// [architecture]
/// embed_size = 32
///
/// [training]
/// lambda = 0.8
///
/// [data]
/// train = "train.jsonl"
/// val = "val.jsonl"
/// test = "test.jsonl"
///
/// [experiment]
/// preset = "seq2set_simplified"
/// transforms = [{ op = "shuffle_labels", seed = 3 }]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub architecture: ArchConfig,
    #[serde(default)]
    pub training: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub val: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub label_order: LabelOrderPolicy,
    /// Samples longer than this many words are dropped from every split.
    #[serde(default = "default_max_words")]
    pub max_words: usize,
}

fn default_max_words() -> usize {
    DEFAULT_MAX_WORDS
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub corpus_style: CorpusStyle,
    /// Applied in order to the loaded splits before training.
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

/// Dataset surgery applied consistently to all splits; label statistics
/// come from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    ShuffleLabels { seed: u64 },
    RemoveTopK { k: usize },
    Uncorrelated { max_corr: f64 },
}

/// Training, validation and optional test samples.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Option<Vec<Sample>>,
}

impl Splits {
    fn map_all(&mut self, mut f: impl FnMut(usize, &[Sample]) -> Vec<Sample>) {
        self.train = f(0, &self.train);
        self.val = f(1, &self.val);
        if let Some(t) = &self.test {
            self.test = Some(f(2, t));
        }
    }

    pub fn apply(&mut self, t: &Transform) -> Result<()> {
        match *t {
            Transform::ShuffleLabels { seed } => {
                self.map_all(|i, s| shuffle_labels(s, seed.wrapping_add(i as u64)));
            }
            Transform::RemoveTopK { k } => {
                let (_, removed) = remove_top_k(&self.train, k)?;
                let drop: HashSet<String> = removed.into_iter().collect();
                self.map_all(|_, s| without_labels(s, &drop));
            }
            Transform::Uncorrelated { max_corr } => {
                let keep: HashSet<String> = uncorrelated_subset(&self.train, max_corr)?
                    .admitted
                    .into_iter()
                    .collect();
                self.map_all(|_, s| {
                    s.iter()
                        .filter(|x| x.labels.iter().all(|l| keep.contains(l)))
                        .cloned()
                        .collect()
                });
            }
        }
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "transform {t:?} emptied a split"
            )));
        }
        Ok(())
    }
}

fn without_labels(samples: &[Sample], drop: &HashSet<String>) -> Vec<Sample> {
    samples
        .iter()
        .filter_map(|s| {
            let keep = |l: &&String| !drop.contains(*l);
            let labels: Vec<String> = s.labels.iter().filter(keep).cloned().collect();
            (!labels.is_empty()).then(|| Sample {
                id: s.id.clone(),
                text: s.text.clone(),
                ordered_labels: s.ordered_labels.iter().filter(keep).cloned().collect(),
                labels,
            })
        })
        .collect()
}

impl RunConfig {
    /// Reads `path`, then layers the configuration: the preset's training
    /// settings (command-line preset first, else `experiment.preset`),
    /// then the file's `[training]` keys, then the seed override. Relative
    /// data paths resolve against the file's directory.
    pub fn load(path: &Path, preset: Option<Preset>, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, preset, seed)
    }

    pub fn parse(
        text: &str,
        base: &Path,
        preset: Option<Preset>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let bad = |e: toml::de::Error| Error::Config(e.message().to_string());
        let mut raw: toml::Table = text.parse().map_err(bad)?;
        let file_preset = raw
            .get("experiment")
            .and_then(|e| e.get("preset"))
            .cloned()
            .map(|v| v.try_into::<Preset>())
            .transpose()
            .map_err(|e| Error::Config(format!("experiment.preset: {}", e.message())))?;
        let style = raw
            .get("experiment")
            .and_then(|e| e.get("corpus_style"))
            .cloned()
            .map(|v| v.try_into::<CorpusStyle>())
            .transpose()
            .map_err(|e| Error::Config(format!("experiment.corpus_style: {}", e.message())))?
            .unwrap_or_default();

        let chosen = preset.or(file_preset);
        if let Some(p) = chosen {
            let training = match preset_config(p, style) {
                PresetConfig::Neural(c) => c,
                PresetConfig::BinaryRelevance(_) => {
                    return Err(Error::Config(
                        "preset `br` is not a neural configuration; use `baseline br-train`".into(),
                    ))
                }
            };
            let mut merged = toml::Table::try_from(&training)
                .map_err(|e| Error::Config(format!("preset serialization: {e}")))?;
            if let Some(user) = raw.get("training") {
                let user = user
                    .as_table()
                    .ok_or_else(|| Error::Config("training must be a table".into()))?;
                for (k, v) in user {
                    merged.insert(k.clone(), v.clone());
                }
            }
            raw.insert("training".into(), toml::Value::Table(merged));
            let exp = raw
                .entry("experiment")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let Some(t) = exp.as_table_mut() {
                t.insert("preset".into(), toml::Value::String(p.name().into()));
            }
        }

        let mut cfg: RunConfig = raw.try_into().map_err(bad)?;
        if let Some(s) = seed {
            cfg.training.seed = s;
        }
        for p in [&mut cfg.data.train, &mut cfg.data.val] {
            *p = base.join(&*p);
        }
        if let Some(t) = &mut cfg.data.test {
            *t = base.join(&*t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.training.validate()?;
        if self.data.max_words == 0 {
            return Err(Error::Config("data.max_words: must be positive".into()));
        }
        for t in &self.experiment.transforms {
            if let Transform::Uncorrelated { max_corr } = t {
                if !(0.0..=1.0).contains(max_corr) {
                    return Err(Error::Config(format!(
                        "experiment.transforms: max_corr {max_corr} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    /// SHA-256 of the resolved TOML text.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}
