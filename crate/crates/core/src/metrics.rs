//! Multi-label metrics and the order-invariant reward.
//!
//! All ratios follow the 0/0 → 0 convention.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::LabelVocab;
use crate::decoding::{trace_to_labelset, DecodeTrace};
use crate::error::{Error, Result};

/// `L` binary flags over the real labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndicatorVector(Vec<bool>);

impl IndicatorVector {
    pub fn from_ids<I: IntoIterator<Item = usize>>(ids: I, num_labels: usize) -> Result<Self> {
        let mut flags = vec![false; num_labels];
        for id in ids {
            *flags.get_mut(id).ok_or_else(|| {
                Error::InvalidArgument(format!("label id {id} outside {num_labels} labels"))
            })? = true;
        }
        Ok(IndicatorVector(flags))
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn to_indicator<S: AsRef<str>>(labels: &[S], vocab: &LabelVocab) -> Result<IndicatorVector> {
    let ids = labels
        .iter()
        .map(|l| {
            vocab
                .id(l.as_ref())
                .ok_or_else(|| Error::VocabMismatch(format!("unknown label `{}`", l.as_ref())))
        })
        .collect::<Result<Vec<_>>>()?;
    IndicatorVector::from_ids(ids, vocab.len())
}

/// Micro-pooled confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn of(pred: &IndicatorVector, gold: &IndicatorVector) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.0.iter().zip(&gold.0) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    pub fn merge(self, other: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_lengths(preds: &[IndicatorVector], golds: &[IndicatorVector]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold samples",
            preds.len(),
            golds.len()
        )));
    }
    if let Some((i, _)) = preds
        .iter()
        .zip(golds)
        .enumerate()
        .find(|(_, (p, g))| p.len() != g.len())
    {
        return Err(Error::InvalidArgument(format!(
            "sample {i}: indicator lengths {} and {} differ",
            preds[i].len(),
            golds[i].len()
        )));
    }
    Ok(())
}

/// Fraction of (sample, label) positions predicted wrongly.
pub fn hamming_loss(preds: &[IndicatorVector], golds: &[IndicatorVector]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(golds) {
        wrong += p.0.iter().zip(&g.0).filter(|(a, b)| a != b).count();
        total += p.len();
    }
    Ok(ratio(wrong as u64, total as u64))
}

pub fn confusion(preds: &[IndicatorVector], golds: &[IndicatorVector]) -> Result<ConfusionCounts> {
    check_lengths(preds, golds)?;
    Ok(preds
        .iter()
        .zip(golds)
        .map(|(p, g)| ConfusionCounts::of(p, g))
        .fold(ConfusionCounts::default(), ConfusionCounts::merge))
}

/// Micro precision, recall and F1.
pub fn micro_prf(preds: &[IndicatorVector], golds: &[IndicatorVector]) -> Result<(f64, f64, f64)> {
    let c = confusion(preds, golds)?;
    Ok((c.precision(), c.recall(), c.f1()))
}

/// Per-sample F1 between two label sets.
pub fn set_f1(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    let tp = pred.intersection(gold).count() as u64;
    ConfusionCounts {
        tp,
        fp: pred.len() as u64 - tp,
        fn_: gold.len() as u64 - tp,
    }
    .f1()
}

/// Reward of a decoded trace: F1 of its label set against `gold`. Only real
/// labels count; the order of emission is irrelevant.
pub fn reward(trace: &DecodeTrace, gold: &BTreeSet<usize>) -> f64 {
    set_f1(&trace_to_labelset(trace), gold)
}

/// Evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub hamming_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub samples: usize,
    pub num_labels: usize,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EvalReportDoc {
    hamming_loss: String,
    micro_precision: String,
    micro_recall: String,
    micro_f1: String,
    counts: ConfusionCounts,
    samples: usize,
    num_labels: usize,
    config_hash: Option<String>,
    seed: Option<u64>,
}

impl EvalReport {
    pub fn from_indicators(preds: &[IndicatorVector], golds: &[IndicatorVector]) -> Result<Self> {
        let counts = confusion(preds, golds)?;
        Ok(EvalReport {
            hamming_loss: hamming_loss(preds, golds)?,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
            samples: preds.len(),
            num_labels: golds.first().map_or(0, IndicatorVector::len),
            config_hash: None,
            seed: None,
        })
    }

    /// JSON document with the four metrics at four decimal places.
    pub fn to_json(&self) -> Result<String> {
        let doc = EvalReportDoc {
            hamming_loss: format!("{:.4}", self.hamming_loss),
            micro_precision: format!("{:.4}", self.precision),
            micro_recall: format!("{:.4}", self.recall),
            micro_f1: format!("{:.4}", self.f1),
            counts: self.counts,
            samples: self.samples,
            num_labels: self.num_labels,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}
