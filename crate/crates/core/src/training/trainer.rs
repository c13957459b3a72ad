use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objectives::{batch_gradients, Objective, Terms};
use super::optim::{adam_step, clip_gradients, LrSchedule, OptimizerState};
use super::{Example, TrainConfig};
use crate::data::{
    order_labels, LabelFrequencies, LabelOrderPolicy, LabelVocab, Sample, Vocabulary,
};
use crate::decoding::{greedy_decode, trace_to_labelset, DecodeTrace};
use crate::diffmath::Real;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, IndicatorVector};
use crate::model::{ArchConfig, Model, ModelConfig};

/// Vocabularies plus tensorized training and validation examples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub labels: LabelVocab,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl Dataset {
    /// Longest training label set plus two.
    pub fn default_max_len(&self) -> usize {
        self.train.iter().map(|e| e.gold.len()).max().unwrap_or(0) + 2
    }
}

/// Builds vocabularies from the training split (label names from both
/// splits), orders labels by `policy` using training-split frequencies and
/// tensorizes both splits.
pub fn prepare_dataset(
    train: &[Sample],
    val: &[Sample],
    vocab_cap: usize,
    policy: LabelOrderPolicy,
) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let vocab = Vocabulary::build(train, vocab_cap)?;
    let mut both = train.to_vec();
    both.extend_from_slice(val);
    let labels = LabelVocab::build(&both)?;
    let freqs = LabelFrequencies::count(train);
    let encode = |samples: &[Sample]| -> Result<Vec<Example>> {
        order_labels(samples, policy, &freqs)
            .iter()
            .map(|s| Example::from_sample(s, &vocab, &labels))
            .collect()
    };
    Ok(Dataset {
        train: encode(train)?,
        val: encode(val)?,
        vocab,
        labels,
    })
}

/// Greedy-decoded traces and the resulting report.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub traces: Vec<DecodeTrace>,
}

/// Inference-mode greedy decoding of every example, scored against the gold
/// label sets.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    max_len: usize,
) -> Result<Evaluation> {
    let l = model.num_labels();
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut traces = Vec::with_capacity(examples.len());
    for ex in examples {
        let trace = greedy_decode(model, &ex.tokens, max_len)?;
        preds.push(IndicatorVector::from_ids(trace_to_labelset(&trace), l)?);
        golds.push(IndicatorVector::from_ids(ex.gold.iter().copied(), l)?);
        traces.push(trace);
    }
    let mut report = EvalReport::from_indicators(&preds, &golds)?;
    report.num_labels = l;
    Ok(Evaluation { report, traces })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the randomness used for one example within one update.
pub fn example_seed(seed: u64, update: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ update) ^ index)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEvent {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean training losses over the updates since the previous event.
    pub loss: Option<f64>,
    pub mle_loss: Option<f64>,
    pub rl_loss: Option<f64>,
    pub hamming_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub best: bool,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation micro-F1.
    pub best: Model<f32>,
    pub best_step: usize,
    pub best_val_f1: f64,
    pub events: Vec<ValidationEvent>,
    pub updates: usize,
    pub max_len: usize,
    /// Set when training stopped on a non-finite loss or gradient; `best`
    /// then holds the last good selection.
    pub diverged: Option<Error>,
}

#[derive(Default)]
struct Running {
    n: usize,
    loss: f64,
    mle: f64,
    rl: f64,
    has_mle: bool,
    has_rl: bool,
}

impl Running {
    fn means(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        if self.n == 0 {
            return (None, None, None);
        }
        let n = self.n as f64;
        (
            Some(self.loss / n),
            self.has_mle.then(|| self.mle / n),
            self.has_rl.then(|| self.rl / n),
        )
    }
}

/// Trains a fresh model. Validation runs every `val_interval` updates and
/// after the last update; the best validation micro-F1 is kept, the initial
/// model counting as step 0. `observer` sees every validation event.
pub fn train(
    arch: &ArchConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn FnMut(&ValidationEvent),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let config = ModelConfig {
        arch: arch.clone(),
        vocab_size: data.vocab.len(),
        num_labels: data.labels.len(),
        variant: cfg.variant,
        head: cfg.head,
    };
    let mut model: Model<f32> = Model::new(config, cfg.seed)?;
    let max_len = cfg.max_len.unwrap_or_else(|| data.default_max_len());
    let obj = Objective::new(cfg, cfg.variant, max_len)?;
    let schedule = LrSchedule {
        initial: cfg.learning_rate,
        decay: cfg.lr_decay,
    };
    let mut opt = OptimizerState::new(model.params(), schedule.at_epoch(0));

    let mut events = Vec::new();
    let mut running = Running::default();
    let mut validate = |model: &Model<f32>,
                        step: usize,
                        epoch: usize,
                        lr: f64,
                        running: &mut Running,
                        best_f1: Option<f64>|
     -> Result<ValidationEvent> {
        let eval = evaluate(model, &data.val, max_len)?;
        let (loss, mle_loss, rl_loss) = running.means();
        *running = Running::default();
        let r = &eval.report;
        let ev = ValidationEvent {
            step,
            epoch,
            lr,
            loss,
            mle_loss,
            rl_loss,
            hamming_loss: r.hamming_loss,
            precision: r.precision,
            recall: r.recall,
            micro_f1: r.f1,
            best: best_f1.map_or(true, |b| r.f1 > b),
        };
        observer(&ev);
        Ok(ev)
    };

    let first = validate(&model, 0, 0, opt.lr, &mut running, None)?;
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_f1 = first.micro_f1;
    events.push(first);

    let mut step = 0usize;
    let mut last_validated = 0usize;
    let mut diverged = None;
    let indices: Vec<usize> = (0..data.train.len()).collect();
    'epochs: for epoch in 0..cfg.max_epochs {
        opt.lr = schedule.at_epoch(epoch);
        let mut order = indices.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(example_seed(
            cfg.seed,
            u64::MAX,
            epoch as u64,
        )));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|i| example_seed(cfg.seed, step as u64, i as u64))
                .collect();
            let mut out = batch_gradients(&model, &batch, &seeds, &obj, Terms::Combined)?;
            if !out.loss.is_finite() {
                diverged = Some(Error::Diverged {
                    step,
                    reason: format!("loss is {}", out.loss),
                });
                break 'epochs;
            }
            if let Err(e) = clip_gradients(&mut out.grads, model.params(), cfg.clip_norm) {
                diverged = Some(Error::Diverged {
                    step,
                    reason: e.to_string(),
                });
                break 'epochs;
            }
            adam_step(model.params_mut(), &out.grads, &mut opt, &cfg.adam)?;
            step += 1;
            running.n += 1;
            running.loss += out.loss;
            if let Some(m) = out.mle_loss {
                running.has_mle = true;
                running.mle += m;
            }
            if let Some(r) = out.rl_loss {
                running.has_rl = true;
                running.rl += r;
            }
            if step % cfg.val_interval == 0 {
                let ev = validate(&model, step, epoch, opt.lr, &mut running, Some(best_f1))?;
                if ev.best {
                    best = model.clone();
                    best_step = step;
                    best_f1 = ev.micro_f1;
                }
                events.push(ev);
                last_validated = step;
            }
        }
    }
    if diverged.is_none() && last_validated != step {
        let epoch = cfg.max_epochs - 1;
        let ev = validate(&model, step, epoch, opt.lr, &mut running, Some(best_f1))?;
        if ev.best {
            best = model.clone();
            best_step = step;
            best_f1 = ev.micro_f1;
        }
        events.push(ev);
    }
    Ok(TrainOutcome {
        best,
        best_step,
        best_val_f1: best_f1,
        events,
        updates: step,
        max_len,
        diverged,
    })
}
