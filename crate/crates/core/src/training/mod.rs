//! Objectives, the self-critical estimator, optimization and the training
//! loop with validation-based model selection.

mod objectives;
mod optim;
mod trainer;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use objectives::{
    batch_gradients, example_gradients, mle_loss, self_critical_loss, self_critical_surrogate,
    BatchOutcome, ExampleOutcome, Objective, Terms,
};
pub use optim::{adam_step, clip_gradients, AdamConfig, LrSchedule, OptimizerState};
pub use trainer::{
    evaluate, example_seed, prepare_dataset, train, Dataset, Evaluation, TrainOutcome,
    ValidationEvent,
};

use crate::data::{LabelVocab, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{check_gold, Head, Variant};

/// Which sequence decoder states the set decoder attends over while its
/// reward term is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// States of the gold-driven sequence decoder pass.
    #[default]
    TeacherForced,
    /// States of a greedy free-running pass.
    FreeRunning,
}

/// Hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the set-decoder reward term; `1 - lambda` weighs the
    /// sequence decoder likelihood.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Per-epoch learning-rate multiplier.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    /// Updates between validation passes.
    pub val_interval: usize,
    pub variant: Variant,
    pub head: Head,
    pub seed: u64,
    pub samples_per_example: usize,
    pub rl_memory: MemoryMode,
    /// Stops reward gradients at the sequence decoder memory.
    pub detach_seq_memory: bool,
    /// Decode length bound; defaults to the longest training label set
    /// plus two.
    pub max_len: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.8,
            learning_rate: 3e-4,
            lr_decay: 0.5,
            batch_size: 64,
            max_epochs: 20,
            clip_norm: 10.0,
            dropout: 0.3,
            val_interval: 100,
            variant: Variant::Full,
            head: Head::Set,
            seed: 0,
            samples_per_example: 1,
            rl_memory: MemoryMode::TeacherForced,
            detach_seq_memory: false,
            max_len: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("training.{field}: {msg}")));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", format!("{} outside [0, 1]", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("{} must be positive", self.learning_rate),
            );
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", format!("{} outside (0, 1]", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", format!("{} must be positive", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("val_interval", self.val_interval),
            ("samples_per_example", self.samples_per_example),
        ] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        if self.max_len == Some(0) {
            return bad("max_len", "must be positive".into());
        }
        if self.variant == Variant::Simplified && self.head == Head::Sequence {
            return bad(
                "head",
                "the simplified variant has no sequence decoder".into(),
            );
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(
                "adam",
                "betas must lie in [0, 1) and eps be positive".into(),
            );
        }
        Ok(())
    }
}

/// A tensorized sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<usize>,
    /// Label ids in training order (no bos/eos).
    pub gold: Vec<usize>,
    pub gold_set: BTreeSet<usize>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<usize>,
        gold: Vec<usize>,
        num_labels: usize,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("example has no tokens".into()));
        }
        check_gold(&gold, num_labels)?;
        Ok(Example {
            id: id.into(),
            tokens,
            gold_set: gold.iter().copied().collect(),
            gold,
        })
    }

    /// Encodes a sample's text and ordered labels. Empty texts become a
    /// single unknown token.
    pub fn from_sample(sample: &Sample, vocab: &Vocabulary, labels: &LabelVocab) -> Result<Self> {
        let mut tokens = vocab.encode(&sample.text);
        if tokens.is_empty() {
            tokens.push(Vocabulary::UNK);
        }
        Self::new(
            sample.id.clone(),
            tokens,
            labels.encode(&sample.ordered_labels)?,
            labels.len(),
        )
    }
}
