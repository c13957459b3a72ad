//! Episode generation: greedy and Monte-Carlo rollouts through a decoder,
//! the bos/eos protocol, and traces for the policy gradient.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{softmax, NodeId, Real, Tape};
use crate::error::{Error, Result};
use crate::model::{argmax, DecoderContext, Dropout, Encoded, Head, LabelMask, Model, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Label(usize),
    Eos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

/// A generated label sequence with the log-probability of every emitted
/// symbol (eos included).
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub symbols: Vec<Symbol>,
    pub log_probs: Vec<f64>,
    pub termination: Termination,
}

impl DecodeTrace {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Emitted labels in generation order.
    pub fn labels(&self) -> Vec<usize> {
        self.symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Label(l) => Some(*l),
                Symbol::Eos => None,
            })
            .collect()
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// The emitted labels as a set. Eos is dropped; truncated traces keep every
/// label they emitted.
pub fn trace_to_labelset(trace: &DecodeTrace) -> BTreeSet<usize> {
    trace.labels().into_iter().collect()
}

/// How each step's symbol is chosen.
pub enum Selection<'r> {
    Greedy,
    Sample(&'r mut ChaCha8Rng),
    /// Replays the given output positions (labels `0..L`, eos `L`).
    Forced(&'r [usize]),
}

/// A rollout recorded on a tape. `log_probs[t]` is the node holding the
/// log-probability of the symbol emitted at step `t`.
pub struct Rollout {
    pub trace: DecodeTrace,
    pub log_probs: Vec<NodeId>,
}

/// Draws an index from a probability vector. Zero-probability entries are
/// never returned.
fn draw<T: Real>(probs: &[T], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.to_f64_lossy();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Runs one decoder episode from bos until eos or `max_len` symbols.
#[allow(clippy::too_many_arguments)]
pub fn rollout<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    ctx: &DecoderContext,
    encoded: &Encoded,
    max_len: usize,
    mut selection: Selection<'_>,
    dropout: &mut Dropout<'_>,
) -> Result<Rollout> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let eos = model.eos();
    let mut state = model.initial_state(tape, ctx, encoded)?;
    let mut mask = LabelMask::new(model.num_labels());
    let mut y_prev = model.bos();
    let mut symbols = Vec::new();
    let mut log_probs = Vec::new();
    let mut lp_nodes = Vec::new();
    let mut termination = Termination::MaxLen;

    for t in 0..max_len {
        let step = model.step(tape, ctx, &state, y_prev, &mask, dropout)?;
        let choice = match &mut selection {
            Selection::Greedy => argmax(&step.masked),
            Selection::Sample(rng) => draw(&softmax(&step.masked)?, rng),
            Selection::Forced(seq) => match seq.get(t) {
                Some(&s) => s,
                None => break,
            },
        };
        let lp = tape.masked_log_softmax(step.logits, mask.flags(), choice)?;
        log_probs.push(tape.scalar(lp).to_f64_lossy());
        lp_nodes.push(lp);
        state = step.state;
        if choice == eos {
            symbols.push(Symbol::Eos);
            termination = Termination::Eos;
            break;
        }
        symbols.push(Symbol::Label(choice));
        mask.update(choice);
        y_prev = choice;
    }
    Ok(Rollout {
        trace: DecodeTrace {
            symbols,
            log_probs,
            termination,
        },
        log_probs: lp_nodes,
    })
}

fn decode_inference<T: Real>(
    model: &Model<T>,
    tokens: &[usize],
    max_len: usize,
    selection: Selection<'_>,
) -> Result<DecodeTrace> {
    let mut tape = Tape::new(model.params());
    let mut off = Dropout::Off;
    let enc = model.encode(&mut tape, tokens, &mut off)?;
    let head = model.config().head;
    let seq_memory = match (head, model.variant()) {
        (Head::Set, Variant::Full) => Some(
            model
                .run_seq_decoder(&mut tape, &enc, None, max_len, &mut off)?
                .memory,
        ),
        _ => None,
    };
    let ctx = model.decoder_context(&mut tape, head, &enc, seq_memory)?;
    Ok(rollout(model, &mut tape, &ctx, &enc, max_len, selection, &mut off)?.trace)
}

/// Inference-mode greedy decoding: dropout off, and in the full variant the
/// set decoder attends over a free-running greedy sequence decoder pass.
pub fn greedy_decode<T: Real>(
    model: &Model<T>,
    tokens: &[usize],
    max_len: usize,
) -> Result<DecodeTrace> {
    decode_inference(model, tokens, max_len, Selection::Greedy)
}

/// Inference-mode sampling from the output head's masked distribution.
pub fn sample_decode<T: Real>(
    model: &Model<T>,
    tokens: &[usize],
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DecodeTrace> {
    decode_inference(model, tokens, max_len, Selection::Sample(rng))
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Predicted label names in generation order.
    pub labels: Vec<String>,
    pub log_probs: Vec<f64>,
}
