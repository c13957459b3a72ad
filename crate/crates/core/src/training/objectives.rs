use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Example, MemoryMode, TrainConfig};
use crate::decoding::{rollout, DecodeTrace, Rollout, Selection};
use crate::diffmath::{Gradients, NodeId, Real, Tape};
use crate::error::{Error, Result};
use crate::metrics::reward;
use crate::model::{Dropout, Encoded, Head, LabelMask, Model, Variant};

/// Negative log-likelihood of `gold` followed by eos under teacher-forced
/// step logits. Step `t` is masked by the gold labels before it.
pub fn mle_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    step_logits: &[NodeId],
    gold: &[usize],
) -> Result<NodeId> {
    if step_logits.len() != gold.len() + 1 {
        return Err(Error::shape(
            "mle_loss",
            format!(
                "{} steps for {} gold labels plus eos",
                step_logits.len(),
                gold.len()
            ),
        ));
    }
    let outputs = tape.shape(step_logits[0]).first().copied().unwrap_or(0);
    if outputs < 2 {
        return Err(Error::shape(
            "mle_loss",
            "logits need at least one label and eos",
        ));
    }
    let eos = outputs - 1;
    let mut mask = LabelMask::new(eos);
    let mut terms = Vec::with_capacity(step_logits.len());
    for (t, &logits) in step_logits.iter().enumerate() {
        let target = gold.get(t).copied().unwrap_or(eos);
        if target >= eos && t < gold.len() {
            return Err(Error::InvalidArgument(format!(
                "gold label {target} out of range"
            )));
        }
        terms.push(
            tape.masked_log_softmax(logits, mask.flags(), target)
                .map_err(|e| match e {
                    Error::NoAdmissible(_) => Error::InvalidArgument(format!(
                        "gold label {target} is masked at step {t}: duplicate gold labels"
                    )),
                    e => e,
                })?,
        );
        mask.update(target);
    }
    let total = tape.sum(&terms)?;
    Ok(tape.scale(total, -T::one()))
}

/// `-advantage * Σ_t log p(y_t)`. The advantage is a constant, so the
/// gradient is the self-critical policy-gradient estimate.
pub fn self_critical_surrogate<T: Real>(
    tape: &mut Tape<'_, T>,
    log_probs: &[NodeId],
    advantage: f64,
) -> Result<NodeId> {
    let total = tape.sum(log_probs)?;
    Ok(tape.scale(total, T::lit(-advantage)))
}

/// Self-critical loss for one sampled rollout against a greedy baseline
/// trace. Returns the surrogate node and the advantage
/// `r(sample) - r(greedy)`.
pub fn self_critical_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    sample: &Rollout,
    greedy: &DecodeTrace,
    gold: &BTreeSet<usize>,
) -> Result<(NodeId, f64)> {
    let advantage = reward(&sample.trace, gold) - reward(greedy, gold);
    Ok((
        self_critical_surrogate(tape, &sample.log_probs, advantage)?,
        advantage,
    ))
}

/// Settings of the per-example objective, resolved from a [`TrainConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    /// Weight of the set-decoder term; forced to 1 for the simplified
    /// variant.
    pub lambda: f64,
    pub dropout: f64,
    pub rl_memory: MemoryMode,
    pub detach_seq_memory: bool,
    pub samples_per_example: usize,
    pub max_len: usize,
}

impl Objective {
    pub fn new(cfg: &TrainConfig, variant: Variant, max_len: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.lambda) {
            return Err(Error::Config(format!(
                "training.lambda = {} outside [0, 1]",
                cfg.lambda
            )));
        }
        if cfg.samples_per_example == 0 {
            return Err(Error::Config(
                "training.samples_per_example must be positive".into(),
            ));
        }
        if max_len == 0 {
            return Err(Error::Config("training.max_len must be positive".into()));
        }
        Ok(Objective {
            lambda: match variant {
                Variant::Full => cfg.lambda,
                Variant::Simplified => 1.0,
            },
            dropout: cfg.dropout,
            rl_memory: cfg.rl_memory,
            detach_seq_memory: cfg.detach_seq_memory,
            samples_per_example: cfg.samples_per_example,
            max_len,
        })
    }
}

/// Loss values and gradient of one example.
#[derive(Clone, Debug)]
pub struct ExampleOutcome<T> {
    pub grads: Gradients<T>,
    pub loss: f64,
    pub mle_loss: Option<f64>,
    pub rl_loss: Option<f64>,
    /// Mean reward of the sampled rollouts.
    pub sample_reward: Option<f64>,
    pub greedy_reward: Option<f64>,
}

/// Which loss terms to build, independent of their weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terms {
    /// `(1 - λ) L_mle + λ L_rl`, dropping terms with zero weight.
    Combined,
    MleOnly,
    RlOnly,
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let dropout = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = ChaCha8Rng::seed_from_u64(seed);
    sample.set_stream(1);
    (dropout, sample)
}

fn dropout_for<'r>(rate: f64, rng: &'r mut ChaCha8Rng) -> Dropout<'r> {
    if rate > 0.0 {
        Dropout::On { rate, rng }
    } else {
        Dropout::Off
    }
}

/// Sequence decoder memory the set decoder attends over during training.
fn training_seq_memory<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    enc: &Encoded,
    example: &Example,
    mode: MemoryMode,
    max_len: usize,
    dropout: &mut Dropout<'_>,
) -> Result<NodeId> {
    let gold = match mode {
        MemoryMode::TeacherForced => Some(example.gold.as_slice()),
        MemoryMode::FreeRunning => None,
    };
    Ok(model
        .run_seq_decoder(tape, enc, gold, max_len, dropout)?
        .memory)
}

/// Greedy set-decoder trace with dropout off, used as the baseline.
fn greedy_baseline<T: Real>(
    model: &Model<T>,
    example: &Example,
    obj: &Objective,
) -> Result<DecodeTrace> {
    let mut tape = Tape::new(model.params());
    let mut off = Dropout::Off;
    let enc = model.encode(&mut tape, &example.tokens, &mut off)?;
    let seq = match model.variant() {
        Variant::Full => Some(training_seq_memory(
            model,
            &mut tape,
            &enc,
            example,
            obj.rl_memory,
            obj.max_len,
            &mut off,
        )?),
        Variant::Simplified => None,
    };
    let ctx = model.decoder_context(&mut tape, Head::Set, &enc, seq)?;
    Ok(rollout(
        model,
        &mut tape,
        &ctx,
        &enc,
        obj.max_len,
        Selection::Greedy,
        &mut off,
    )?
    .trace)
}

/// Forward and backward pass for one example. `seed` fixes the dropout
/// masks and the sampled rollouts, so different `terms` on the same seed
/// see the same randomness.
pub fn example_gradients<T: Real>(
    model: &Model<T>,
    example: &Example,
    obj: &Objective,
    terms: Terms,
    seed: u64,
) -> Result<ExampleOutcome<T>> {
    let full = model.variant() == Variant::Full;
    let (use_mle, use_rl, w_mle, w_rl) = match terms {
        Terms::Combined => (
            full && obj.lambda < 1.0,
            obj.lambda > 0.0,
            if full { 1.0 - obj.lambda } else { 0.0 },
            obj.lambda,
        ),
        Terms::MleOnly if full => (true, false, 1.0, 0.0),
        Terms::MleOnly => {
            return Err(Error::Config(
                "the simplified variant has no likelihood term".into(),
            ))
        }
        Terms::RlOnly => (false, true, 0.0, 1.0),
    };

    let (mut drop_rng, mut sample_rng) = rngs(seed);
    let mut dropout = dropout_for(obj.dropout, &mut drop_rng);
    let mut tape = Tape::new(model.params());
    let enc = model.encode(&mut tape, &example.tokens, &mut dropout)?;

    let mut parts = Vec::new();
    let mut mle_value = None;
    let mut seq_memory = None;
    if full && (use_mle || (use_rl && obj.rl_memory == MemoryMode::TeacherForced)) {
        let run = model.run_seq_decoder(
            &mut tape,
            &enc,
            Some(&example.gold),
            obj.max_len,
            &mut dropout,
        )?;
        if use_mle {
            let loss = mle_loss(&mut tape, &run.logits, &example.gold)?;
            mle_value = Some(tape.scalar(loss).to_f64_lossy());
            parts.push(tape.scale(loss, T::lit(w_mle)));
        }
        seq_memory = Some(run.memory);
    }

    let mut rl_value = None;
    let mut rewards = None;
    if use_rl {
        let memory = match (full, obj.rl_memory) {
            (false, _) => None,
            (true, MemoryMode::TeacherForced) => seq_memory,
            (true, MemoryMode::FreeRunning) => Some(training_seq_memory(
                model,
                &mut tape,
                &enc,
                example,
                MemoryMode::FreeRunning,
                obj.max_len,
                &mut dropout,
            )?),
        };
        let memory = match memory {
            Some(m) if obj.detach_seq_memory => Some(tape.detach(m)),
            m => m,
        };
        let ctx = model.decoder_context(&mut tape, Head::Set, &enc, memory)?;
        let greedy = if obj.dropout > 0.0 {
            greedy_baseline(model, example, obj)?
        } else {
            let mut off = Dropout::Off;
            rollout(
                model,
                &mut tape,
                &ctx,
                &enc,
                obj.max_len,
                Selection::Greedy,
                &mut off,
            )?
            .trace
        };
        let n = obj.samples_per_example;
        let mut surrogates = Vec::with_capacity(n);
        let mut sample_reward = 0.0;
        for _ in 0..n {
            let sample = rollout(
                model,
                &mut tape,
                &ctx,
                &enc,
                obj.max_len,
                Selection::Sample(&mut sample_rng),
                &mut dropout,
            )?;
            let (loss, _) = self_critical_loss(&mut tape, &sample, &greedy, &example.gold_set)?;
            sample_reward += reward(&sample.trace, &example.gold_set);
            surrogates.push(loss);
        }
        let total = tape.sum(&surrogates)?;
        let rl = tape.scale(total, T::lit(1.0 / n as f64));
        rl_value = Some(tape.scalar(rl).to_f64_lossy());
        rewards = Some((sample_reward / n as f64, reward(&greedy, &example.gold_set)));
        parts.push(tape.scale(rl, T::lit(w_rl)));
    }

    let loss = tape.sum(&parts)?;
    let value = tape.scalar(loss).to_f64_lossy();
    let grads = tape.param_gradients(&tape.backward_scalar(loss)?);
    Ok(ExampleOutcome {
        grads,
        loss: value,
        mle_loss: mle_value,
        rl_loss: rl_value,
        sample_reward: rewards.map(|r| r.0),
        greedy_reward: rewards.map(|r| r.1),
    })
}

/// Batch-mean losses and gradient.
#[derive(Clone, Debug)]
pub struct BatchOutcome<T> {
    pub grads: Gradients<T>,
    pub loss: f64,
    pub mle_loss: Option<f64>,
    pub rl_loss: Option<f64>,
    pub sample_reward: Option<f64>,
}

/// Mean of [`example_gradients`] over a batch; example `i` uses `seeds[i]`.
/// Results are accumulated in batch order.
pub fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &[&Example],
    seeds: &[u64],
    obj: &Objective,
    terms: Terms,
) -> Result<BatchOutcome<T>> {
    if batch.is_empty() || batch.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} examples with {} seeds",
            batch.len(),
            seeds.len()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(model.params());
    let mut loss = 0.0;
    let mut mle: Option<f64> = None;
    let mut rl: Option<f64> = None;
    let mut sample_reward: Option<f64> = None;
    let acc = |slot: &mut Option<f64>, v: Option<f64>| {
        if let Some(v) = v {
            *slot = Some(slot.unwrap_or(0.0) + v * scale);
        }
    };
    for (ex, &seed) in batch.iter().zip(seeds) {
        let out = example_gradients(model, ex, obj, terms, seed)?;
        grads.add_scaled(&out.grads, T::lit(scale));
        loss += out.loss * scale;
        acc(&mut mle, out.mle_loss);
        acc(&mut rl, out.rl_loss);
        acc(&mut sample_reward, out.sample_reward);
    }
    Ok(BatchOutcome {
        grads,
        loss,
        mle_loss: mle,
        rl_loss: rl,
        sample_reward,
    })
}
