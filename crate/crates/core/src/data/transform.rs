use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelFrequencies, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_WORDS: usize = 500;
pub const DEFAULT_MAX_CORR: f64 = 0.28;

#[derive(Clone, Debug)]
pub struct FilterReport {
    pub kept: Vec<Sample>,
    pub removed: usize,
    pub fraction_removed: f64,
}

/// Drops samples with more than `limit` tokens.
pub fn filter_long(samples: Vec<Sample>, limit: usize) -> FilterReport {
    let total = samples.len();
    let kept: Vec<Sample> = samples
        .into_iter()
        .filter(|s| s.text.len() <= limit)
        .collect();
    let removed = total - kept.len();
    FilterReport {
        fraction_removed: if total == 0 {
            0.0
        } else {
            removed as f64 / total as f64
        },
        kept,
        removed,
    }
}

/// How the decoder's target label sequence is ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelOrderPolicy {
    /// Most frequent label first; ties by ascending name.
    #[default]
    FrequencyDesc,
    /// Independent seeded permutation per sample.
    Shuffled { seed: u64 },
    /// The order stored in the corpus.
    AsGiven,
}

/// Sets `ordered_labels` of every sample. Frequencies come from `reference`,
/// normally the training split.
pub fn order_labels(
    samples: &[Sample],
    policy: LabelOrderPolicy,
    reference: &LabelFrequencies,
) -> Vec<Sample> {
    let mut out = samples.to_vec();
    match policy {
        LabelOrderPolicy::AsGiven => {
            for s in &mut out {
                s.ordered_labels = s.labels.clone();
            }
        }
        LabelOrderPolicy::FrequencyDesc => {
            for s in &mut out {
                let mut o = s.labels.clone();
                o.sort_by(|a, b| {
                    reference
                        .get(b)
                        .cmp(&reference.get(a))
                        .then_with(|| a.cmp(b))
                });
                s.ordered_labels = o;
            }
        }
        LabelOrderPolicy::Shuffled { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for s in &mut out {
                let mut o = s.labels.clone();
                o.shuffle(&mut rng);
                s.ordered_labels = o;
            }
        }
    }
    out
}

/// Per-sample seeded shuffle of the stored label order. Both `labels` and
/// `ordered_labels` take the new order, so the result saves and reloads as a
/// shuffled corpus.
pub fn shuffle_labels(samples: &[Sample], seed: u64) -> Vec<Sample> {
    let mut out = order_labels(
        samples,
        LabelOrderPolicy::Shuffled { seed },
        &LabelFrequencies::default(),
    );
    for s in &mut out {
        s.labels = s.ordered_labels.clone();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle, then slice into train / validation / test.
pub fn split(
    samples: &[Sample],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    ratios.validate()?;
    let n = samples.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (((n as f64) * ratios.train).round() as usize).min(n);
    let n_val = (((n as f64) * ratios.val).round() as usize).min(n - n_train);
    let take = |r: &[usize]| r.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&idx[..n_train]),
        take(&idx[n_train..n_train + n_val]),
        take(&idx[n_train + n_val..]),
    ))
}

/// Deletes the `k` most frequent labels from every sample and drops samples
/// left without labels. Returns the surviving samples and the removed
/// labels, most frequent first.
pub fn remove_top_k(samples: &[Sample], k: usize) -> Result<(Vec<Sample>, Vec<String>)> {
    let ranked = LabelFrequencies::count(samples).ranked();
    if k > 0 && k >= ranked.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {k} of {} distinct labels",
            ranked.len()
        )));
    }
    let removed: Vec<String> = ranked.into_iter().take(k).map(|(n, _)| n).collect();
    let drop: HashSet<&str> = removed.iter().map(String::as_str).collect();
    let kept = samples
        .iter()
        .filter_map(|s| {
            let keep = |l: &String| !drop.contains(l.as_str());
            let labels: Vec<String> = s.labels.iter().filter(|l| keep(l)).cloned().collect();
            if labels.is_empty() {
                return None;
            }
            Some(Sample {
                id: s.id.clone(),
                text: s.text.clone(),
                ordered_labels: s
                    .ordered_labels
                    .iter()
                    .filter(|l| keep(l))
                    .cloned()
                    .collect(),
                labels,
            })
        })
        .collect();
    Ok((kept, removed))
}

/// Pearson correlation of the binary indicator columns of labels `a` and
/// `b` over `samples`. Zero when either column is constant.
pub fn phi_coefficient(samples: &[Sample], a: &str, b: &str) -> f64 {
    let col = |l: &str| -> Vec<bool> {
        samples
            .iter()
            .map(|s| s.labels.iter().any(|x| x == l))
            .collect()
    };
    phi_from_columns(&col(a), &col(b))
}

fn phi_from_columns(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let na = a.iter().filter(|&&x| x).count() as f64;
    let nb = b.iter().filter(|&&x| x).count() as f64;
    let nab = a.iter().zip(b).filter(|(&x, &y)| x && y).count() as f64;
    let denom = (na * (n - na) * nb * (n - nb)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (n * nab - na * nb) / denom
    }
}

#[derive(Clone, Debug)]
pub struct Uncorrelated {
    pub samples: Vec<Sample>,
    /// Admitted labels, in admission order.
    pub admitted: Vec<String>,
    /// Largest pairwise |phi| among admitted labels, measured on the input.
    pub max_abs_phi: f64,
}

/// Builds a label set whose pairwise |phi| never exceeds `max_corr`
/// (greedy, most frequent label first) and keeps the samples whose labels
/// all lie in it.
pub fn uncorrelated_subset(samples: &[Sample], max_corr: f64) -> Result<Uncorrelated> {
    let ranked = LabelFrequencies::count(samples).ranked();
    if ranked.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two distinct labels".into(),
        ));
    }
    let columns: HashMap<&str, Vec<bool>> = ranked
        .iter()
        .map(|(l, _)| {
            (
                l.as_str(),
                samples
                    .iter()
                    .map(|s| s.labels.iter().any(|x| x == l))
                    .collect(),
            )
        })
        .collect();
    let mut admitted: Vec<String> = Vec::new();
    let mut max_abs_phi: f64 = 0.0;
    for (label, _) in &ranked {
        let col = &columns[label.as_str()];
        let phis: Vec<f64> = admitted
            .iter()
            .map(|a| phi_from_columns(col, &columns[a.as_str()]).abs())
            .collect();
        if phis.iter().all(|&p| p <= max_corr) {
            max_abs_phi = phis.into_iter().fold(max_abs_phi, f64::max);
            admitted.push(label.clone());
        }
    }
    let set: HashSet<&str> = admitted.iter().map(String::as_str).collect();
    let kept: Vec<Sample> = samples
        .iter()
        .filter(|s| s.labels.iter().all(|l| set.contains(l.as_str())))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no sample has all its labels among the {} admitted labels {:?} (max_corr = {max_corr})",
            admitted.len(),
            admitted
        )));
    }
    Ok(Uncorrelated {
        samples: kept,
        admitted,
        max_abs_phi,
    })
}
