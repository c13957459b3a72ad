use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelVocab, Sample, Vocabulary};
use crate::diffmath::{Array, ParamSet};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, IndicatorVector};
use crate::model::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};

pub const KIND_BINARY_RELEVANCE: &str = "binary_relevance";

/// Logistic-regression settings shared by every per-label classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrConfig {
    /// A label is predicted when its probability exceeds this value.
    pub threshold: f64,
    /// Full-batch gradient descent step size.
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub vocab_cap: usize,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig {
            threshold: 0.5,
            learning_rate: 4.0,
            epochs: 300,
            l2: 1e-5,
            vocab_cap: 50_000,
        }
    }
}

impl BrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("baseline.{m}")));
        if !(0.0..1.0).contains(&self.threshold) {
            return bad(format!("threshold: {} outside [0, 1)", self.threshold));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate: {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2: {} must be non-negative", self.l2));
        }
        if self.epochs == 0 {
            return bad("epochs: must be positive".into());
        }
        if self.vocab_cap <= Vocabulary::RESERVED {
            return bad(format!(
                "vocab_cap: {} leaves no room for words",
                self.vocab_cap
            ));
        }
        Ok(())
    }
}

/// One linear classifier per label over L2-normalized bag-of-words counts.
#[derive(Clone, Debug, PartialEq)]
pub struct BrModel {
    pub config: BrConfig,
    pub vocab: Vocabulary,
    pub labels: LabelVocab,
    /// Row-major `L x V`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    /// Labels with at least one positive training sample; the others are
    /// never predicted.
    trained: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredConfig {
    config: BrConfig,
    trained: Vec<bool>,
}

fn features(vocab: &Vocabulary, text: &[String]) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for id in vocab.encode(text) {
        *counts.entry(id).or_default() += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(i, c)| (i, c / norm)).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Trains on `samples` with the label vocabulary they induce.
pub fn br_train(samples: &[Sample], config: &BrConfig) -> Result<BrModel> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let labels = LabelVocab::build(samples)?;
    br_train_with_labels(samples, &labels, config)
}

/// Trains one classifier per entry of `labels`. Labels without positive
/// samples get an always-negative classifier.
pub fn br_train_with_labels(
    samples: &[Sample],
    labels: &LabelVocab,
    config: &BrConfig,
) -> Result<BrModel> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty label vocabulary".into()));
    }
    let vocab = Vocabulary::build(samples, config.vocab_cap)?;
    let xs: Vec<Vec<(usize, f64)>> = samples.iter().map(|s| features(&vocab, &s.text)).collect();
    let golds: Vec<BTreeSet<usize>> = samples
        .iter()
        .map(|s| {
            labels
                .encode(&s.labels)
                .map(|ids| ids.into_iter().collect())
        })
        .collect::<Result<_>>()?;

    let (nl, nv) = (labels.len(), vocab.len());
    let n = samples.len() as f64;
    let mut weights = vec![0f32; nl * nv];
    let mut bias = vec![0f32; nl];
    let mut trained = vec![false; nl];
    for j in 0..nl {
        let ys: Vec<f64> = golds
            .iter()
            .map(|g| if g.contains(&j) { 1.0 } else { 0.0 })
            .collect();
        if ys.iter().all(|&y| y == 0.0) {
            continue;
        }
        trained[j] = true;
        let mut w = vec![0f64; nv];
        let mut b = 0f64;
        let mut gw = vec![0f64; nv];
        for _ in 0..config.epochs {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(&ys) {
                let z = b + x.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
                let err = sigmoid(z) - y;
                gb += err;
                for &(i, v) in x {
                    gw[i] += err * v;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&gw) {
                *wi -= config.learning_rate * (gi / n + config.l2 * *wi);
            }
            b -= config.learning_rate * gb / n;
        }
        for (dst, src) in weights[j * nv..(j + 1) * nv].iter_mut().zip(&w) {
            *dst = *src as f32;
        }
        bias[j] = b as f32;
    }
    Ok(BrModel {
        config: config.clone(),
        vocab,
        labels: labels.clone(),
        weights,
        bias,
        trained,
    })
}

impl BrModel {
    /// Per-label probabilities; untrained labels get 0.
    pub fn probabilities(&self, text: &[String]) -> Vec<f64> {
        let x = features(&self.vocab, text);
        let nv = self.vocab.len();
        (0..self.labels.len())
            .map(|j| {
                if !self.trained[j] {
                    return 0.0;
                }
                let row = &self.weights[j * nv..(j + 1) * nv];
                let z =
                    self.bias[j] as f64 + x.iter().map(|&(i, v)| row[i] as f64 * v).sum::<f64>();
                sigmoid(z)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let (nl, nv) = (self.labels.len(), self.vocab.len());
        let mut params = ParamSet::new();
        params.add("br.weight", Array::matrix(nl, nv, self.weights.clone())?)?;
        params.add("br.bias", Array::vector(self.bias.clone()))?;
        let stored = StoredConfig {
            config: self.config.clone(),
            trained: self.trained.clone(),
        };
        Ok(Checkpoint {
            meta: CheckpointMeta {
                kind: KIND_BINARY_RELEVANCE.into(),
                format: CHECKPOINT_FORMAT,
                config: serde_json::to_value(stored)?,
                vocab_sha256: self.vocab.sha256(),
                label_vocab_sha256: self.labels.sha256(),
                step: self.config.epochs,
                val_micro_f1: None,
                max_len: None,
                seed: None,
                config_hash: None,
            },
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.kind != KIND_BINARY_RELEVANCE {
            return Err(Error::Checkpoint(format!(
                "expected a `{KIND_BINARY_RELEVANCE}` checkpoint, found `{}`",
                ckpt.meta.kind
            )));
        }
        let stored: StoredConfig = serde_json::from_value(ckpt.meta.config.clone())?;
        let (nl, nv) = (ckpt.labels.len(), ckpt.vocab.len());
        let get = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let id = ckpt
                .params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let a = ckpt.params.get(id);
            if a.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}",
                    a.shape()
                )));
            }
            Ok(a.data().to_vec())
        };
        let weights = get("br.weight", &[nl, nv])?;
        let bias = get("br.bias", &[nl])?;
        if ckpt.params.len() != 2 || stored.trained.len() != nl {
            return Err(Error::Checkpoint("binary relevance layout mismatch".into()));
        }
        Ok(BrModel {
            config: stored.config,
            vocab: ckpt.vocab.clone(),
            labels: ckpt.labels.clone(),
            weights,
            bias,
            trained: stored.trained,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

/// Label ids whose probability exceeds the model threshold.
pub fn br_predict(model: &BrModel, text: &[String]) -> BTreeSet<usize> {
    model
        .probabilities(text)
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p > model.config.threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Scores predictions against gold sets; gold labels must be known to the
/// model.
pub fn br_evaluate(model: &BrModel, samples: &[Sample]) -> Result<EvalReport> {
    let l = model.labels.len();
    let mut preds = Vec::with_capacity(samples.len());
    let mut golds = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(IndicatorVector::from_ids(br_predict(model, &s.text), l)?);
        golds.push(IndicatorVector::from_ids(
            model.labels.encode(&s.labels)?,
            l,
        )?);
    }
    let mut report = EvalReport::from_indicators(&preds, &golds)?;
    report.num_labels = l;
    Ok(report)
}
