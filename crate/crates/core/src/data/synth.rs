use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

/// Label co-occurrence model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Correlation {
    /// Every label is drawn independently.
    Independent,
    /// The first `roots` labels are parents; every other label is the child
    /// of root `(i - roots) % roots` and can only appear with its parent,
    /// which it then joins with probability `child_prob`.
    Tree { roots: usize, child_prob: f64 },
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_samples: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub correlation: Correlation,
    /// Inclusion probability of the most frequent independent label (or
    /// root); rates fall linearly to `min_label_rate`.
    #[serde(default = "default_max_rate")]
    pub max_label_rate: f64,
    #[serde(default = "default_min_rate")]
    pub min_label_rate: f64,
    /// Probability that a token is drawn from one of the sample's label
    /// word lists rather than from the background vocabulary.
    #[serde(default = "default_signal")]
    pub signal: f64,
    #[serde(default = "default_words_per_label")]
    pub words_per_label: usize,
}

fn default_max_rate() -> f64 {
    0.35
}
fn default_min_rate() -> f64 {
    0.05
}
fn default_signal() -> f64 {
    0.5
}
fn default_words_per_label() -> usize {
    5
}

impl SynthSpec {
    pub fn new(num_samples: usize, num_labels: usize, correlation: Correlation) -> Self {
        SynthSpec {
            num_samples,
            num_labels,
            vocab_size: 400,
            min_len: 10,
            max_len: 30,
            correlation,
            max_label_rate: default_max_rate(),
            min_label_rate: default_min_rate(),
            signal: default_signal(),
            words_per_label: default_words_per_label(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::InvalidArgument(format!(
                "infeasible synthetic spec: {m}"
            )))
        };
        if self.num_labels < 2 {
            return bad("need at least two labels".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range [{}, {}]", self.min_len, self.max_len));
        }
        if self.words_per_label == 0 || self.vocab_size <= self.num_labels * self.words_per_label {
            return bad(format!(
                "vocab_size {} leaves no background words after {} label words",
                self.vocab_size,
                self.num_labels * self.words_per_label
            ));
        }
        let rates = [self.max_label_rate, self.min_label_rate, self.signal];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.max_label_rate <= 0.0 {
            return bad("rates must lie in [0, 1] with a positive maximum".into());
        }
        if let Correlation::Tree { roots, child_prob } = self.correlation {
            if roots == 0 || roots >= self.num_labels {
                return bad(format!("{roots} roots for {} labels", self.num_labels));
            }
            if !(0.0..=1.0).contains(&child_prob) {
                return bad(format!("child_prob {child_prob}"));
            }
        }
        Ok(())
    }

    fn parent(&self, label: usize) -> Option<usize> {
        match self.correlation {
            Correlation::Tree { roots, .. } if label >= roots => Some((label - roots) % roots),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub samples: Vec<Sample>,
    pub label_names: Vec<String>,
    /// Parent label name of each label under a tree structure.
    pub parents: Vec<Option<String>>,
}

pub fn label_name(i: usize) -> String {
    format!("L{i:02}")
}

fn word_name(i: usize) -> String {
    format!("w{i:04}")
}

/// Draws a corpus: a label set per sample from the co-occurrence model, then
/// text tokens mixing label-specific words with background words.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_primary = match spec.correlation {
        Correlation::Independent => spec.num_labels,
        Correlation::Tree { roots, .. } => roots,
    };
    let rate = |i: usize| -> f64 {
        if n_primary == 1 {
            spec.max_label_rate
        } else {
            let t = i as f64 / (n_primary - 1) as f64;
            spec.max_label_rate + t * (spec.min_label_rate - spec.max_label_rate)
        }
    };
    let background = spec.num_labels * spec.words_per_label..spec.vocab_size;

    let mut samples = Vec::with_capacity(spec.num_samples);
    for s in 0..spec.num_samples {
        let mut labels: Vec<usize> = Vec::new();
        while labels.is_empty() {
            let mut present = vec![false; spec.num_labels];
            for (i, p) in present.iter_mut().enumerate().take(n_primary) {
                *p = rng.gen::<f64>() < rate(i);
            }
            if let Correlation::Tree { child_prob, .. } = spec.correlation {
                for i in n_primary..spec.num_labels {
                    let parent = spec.parent(i).expect("child has a parent");
                    present[i] = present[parent] && rng.gen::<f64>() < child_prob;
                }
            }
            labels = (0..spec.num_labels).filter(|&i| present[i]).collect();
        }

        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let text = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < spec.signal {
                    let l = labels[rng.gen_range(0..labels.len())];
                    word_name(l * spec.words_per_label + rng.gen_range(0..spec.words_per_label))
                } else {
                    word_name(rng.gen_range(background.clone()))
                }
            })
            .collect();
        samples.push(Sample::new(
            format!("s{s:06}"),
            text,
            labels.into_iter().map(label_name).collect(),
        )?);
    }
    Ok(SynthCorpus {
        samples,
        label_names: (0..spec.num_labels).map(label_name).collect(),
        parents: (0..spec.num_labels)
            .map(|i| spec.parent(i).map(label_name))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phi_coefficient;

    #[test]
    fn tree_children_need_parent() {
        let spec = SynthSpec::new(
            3000,
            8,
            Correlation::Tree {
                roots: 4,
                child_prob: 0.6,
            },
        );
        let c = synth_generate(&spec, 5).unwrap();
        for s in &c.samples {
            for (i, p) in c.parents.iter().enumerate() {
                if let Some(p) = p {
                    if s.labels.contains(&c.label_names[i]) {
                        assert!(s.labels.contains(p));
                    }
                }
            }
        }
        for (i, p) in c.parents.iter().enumerate() {
            if let Some(p) = p {
                assert!(phi_coefficient(&c.samples, p, &c.label_names[i]) > 0.0);
            }
        }
    }

    #[test]
    fn independent_labels_have_small_phi() {
        let mut spec = SynthSpec::new(10_000, 6, Correlation::Independent);
        // high rates keep empty draws (which get redrawn) rare
        spec.max_label_rate = 0.5;
        spec.min_label_rate = 0.4;
        let c = synth_generate(&spec, 11).unwrap();
        for a in 0..6 {
            for b in a + 1..6 {
                let phi = phi_coefficient(&c.samples, &c.label_names[a], &c.label_names[b]);
                assert!(phi.abs() < 0.1, "{a} {b} {phi}");
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec::new(50, 5, Correlation::Independent);
        let a = synth_generate(&spec, 1).unwrap().samples;
        let b = synth_generate(&spec, 1).unwrap().samples;
        assert_eq!(a, b);
        let c = synth_generate(&spec, 2).unwrap().samples;
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let mut spec = SynthSpec::new(10, 1, Correlation::Independent);
        assert!(synth_generate(&spec, 0).is_err());
        spec.num_labels = 100;
        spec.vocab_size = 50;
        assert!(synth_generate(&spec, 0).is_err());
        let spec = SynthSpec::new(
            10,
            4,
            Correlation::Tree {
                roots: 4,
                child_prob: 0.5,
            },
        );
        assert!(synth_generate(&spec, 0).is_err());
    }
}
