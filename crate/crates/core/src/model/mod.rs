//! The sequence-to-set network: a bidirectional LSTM encoder, an attentive
//! sequence decoder trained by likelihood, and a set decoder that attends
//! over both the encoder states and the sequence decoder states.
//!
//! Output positions are `0..L` for labels and `L` for eos. The label
//! embedding tables carry three extra rows: eos (`L`), bos (`L + 1`) and
//! pad (`L + 2`). Bos is only ever an input.

mod checkpoint;
mod config;
mod mask;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, CheckpointMeta, ManifestEntry, CHECKPOINT_FORMAT, KIND_SEQ2SET};
pub use config::{ArchConfig, Head, ModelConfig, Variant};
pub use mask::LabelMask;

use crate::diffmath::{Array, LstmCellParams, NodeId, ParamId, ParamSet, Real, Tape};
use crate::error::{Error, Result};

const INIT_RANGE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub forward: Vec<LstmCellParams>,
    pub backward: Vec<LstmCellParams>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// Alignment vector `v_a`.
    pub v: ParamId,
    /// Query projection `W_a`.
    pub w: ParamId,
    /// Memory projection `U_a`.
    pub u: ParamId,
}

/// Affine map from the final encoder states to one decoder layer's
/// initial `(h, c)`.
#[derive(Clone, Copy, Debug)]
pub struct BridgeParams {
    pub h_weight: ParamId,
    pub h_bias: ParamId,
    pub c_weight: ParamId,
    pub c_bias: ParamId,
}

/// Parameters of either decoder. The set decoder of the full variant has a
/// second attention over the sequence decoder states; everything else is
/// shared layout.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub label_embedding: ParamId,
    pub bridge: Vec<BridgeParams>,
    pub layers: Vec<LstmCellParams>,
    pub enc_attention: AttentionParams,
    pub dec_attention: Option<AttentionParams>,
    pub w_d: ParamId,
    pub v_d: ParamId,
    pub w_o: ParamId,
}

/// Dropout switch threaded through a forward pass.
pub enum Dropout<'r> {
    Off,
    On { rate: f64, rng: &'r mut ChaCha8Rng },
}

impl Dropout<'_> {
    pub fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: NodeId) -> Result<NodeId> {
        match self {
            Dropout::Off => Ok(x),
            Dropout::On { rate, .. } if *rate <= 0.0 => Ok(x),
            Dropout::On { rate, rng } => {
                let keep = 1.0 - *rate;
                let scale = T::lit(1.0 / keep);
                let n = tape.value(x).len();
                let factors = (0..n)
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                tape.mul_const(x, factors)
            }
        }
    }
}

/// Encoder output for one text.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[m, 2k]`, row `i` is `[forward h_i; backward h_i]`.
    pub memory: NodeId,
    pub len: usize,
    /// Top-layer `(h, c)` of the forward pass at the last position.
    pub final_forward: (NodeId, NodeId),
    /// Top-layer `(h, c)` of the backward pass at the first position.
    pub final_backward: (NodeId, NodeId),
}

/// A memory matrix with its rows already projected by one attention's `U_a`.
#[derive(Clone, Copy, Debug)]
pub struct AttnMemory {
    pub values: NodeId,
    keys: NodeId,
    params: AttentionParams,
}

/// Memories one decoder attends over.
#[derive(Clone, Copy, Debug)]
pub struct DecoderContext {
    pub head: Head,
    pub enc: AttnMemory,
    pub seq: Option<AttnMemory>,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `(h, c)` per layer, bottom first.
    pub layers: Vec<(NodeId, NodeId)>,
    pub enc_context: NodeId,
    pub dec_context: Option<NodeId>,
}

impl DecoderState {
    pub fn top_hidden(&self) -> NodeId {
        self.layers.last().expect("at least one layer").0
    }
}

/// Result of one decoder step.
#[derive(Clone, Debug)]
pub struct Step<T> {
    pub state: DecoderState,
    /// Raw `o_t`, before masking.
    pub logits: NodeId,
    /// `o_t + I_t` values, `-inf` at masked positions.
    pub masked: Vec<T>,
}

/// Output of a sequence decoder pass.
#[derive(Clone, Debug)]
pub struct SeqDecoderRun {
    /// `[rows, k_d]`, the top-layer state after each consumed input.
    pub memory: NodeId,
    pub rows: usize,
    /// Raw logits at every step.
    pub logits: Vec<NodeId>,
    /// Mask in force at every step.
    pub masks: Vec<LabelMask>,
    /// Teacher-forced: gold targets then eos. Free-running: emitted symbols.
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamSet<T>,
    encoder: EncoderParams,
    seq_decoder: Option<DecoderParams>,
    set_decoder: DecoderParams,
}

impl<T: Real> Model<T> {
    /// Fresh model: uniform `[-0.08, 0.08]` weights, forget-gate biases 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |name, shape| {
            let n: usize = shape.iter().product();
            let mut data: Vec<T> = (0..n)
                .map(|_| T::lit(rng.gen_range(-INIT_RANGE..INIT_RANGE)))
                .collect();
            if name.ends_with(".bias") && shape.len() == 1 && n % 4 == 0 && is_lstm_param(name) {
                let k = n / 4;
                for v in &mut data[k..2 * k] {
                    *v = T::lit(FORGET_BIAS);
                }
            }
            Array::new(shape.to_vec(), data)
        })
    }

    /// Names and shapes of every parameter, in registration order.
    pub fn layout(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        Model::<T>::build(config.clone(), |name, shape| {
            out.push((name.to_string(), shape.to_vec()));
            Ok(Array::zeros(shape))
        })?;
        Ok(out)
    }

    /// Builds a model whose parameter values come from `params`, checking
    /// every name and shape against the layout of `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let expected = Self::layout(&config)?;
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                params.len()
            )));
        }
        Self::build(config, |name, shape| {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let a = params.get(id);
            if a.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    a.shape(),
                    shape
                )));
            }
            Ok(a.clone())
        })
    }

    fn build<F>(config: ModelConfig, mut init: F) -> Result<Self>
    where
        F: FnMut(&str, &[usize]) -> Result<Array<T>>,
    {
        config.validate()?;
        let a = &config.arch;
        let mut params = ParamSet::new();
        let mut add =
            |params: &mut ParamSet<T>, name: String, shape: &[usize]| -> Result<ParamId> {
                let arr = init(&name, shape)?;
                params.add(name, arr)
            };

        let embedding = add(
            &mut params,
            "encoder.embedding".into(),
            &[config.vocab_size, a.embed_size],
        )?;
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for l in 0..a.encoder_layers {
            let input = if l == 0 {
                a.embed_size
            } else {
                2 * a.encoder_hidden
            };
            for (dir, stack) in [("fwd", &mut forward), ("bwd", &mut backward)] {
                let prefix = format!("encoder.{dir}.{l}");
                stack.push(lstm_params(
                    &mut params,
                    &mut add,
                    &prefix,
                    input,
                    a.encoder_hidden,
                )?);
            }
        }
        let encoder = EncoderParams {
            embedding,
            forward,
            backward,
        };

        let seq_decoder = match config.variant {
            Variant::Full => Some(decoder_params(
                &mut params,
                &mut add,
                &config,
                "seq_decoder",
                false,
            )?),
            Variant::Simplified => None,
        };
        let set_decoder = decoder_params(
            &mut params,
            &mut add,
            &config,
            "set_decoder",
            config.variant == Variant::Full,
        )?;

        Ok(Model {
            config,
            params,
            encoder,
            seq_decoder,
            set_decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn eos(&self) -> usize {
        self.config.num_labels
    }

    pub fn bos(&self) -> usize {
        self.config.num_labels + 1
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn seq_decoder_params(&self) -> Option<&DecoderParams> {
        self.seq_decoder.as_ref()
    }

    pub fn set_decoder_params(&self) -> &DecoderParams {
        &self.set_decoder
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            seq_decoder: self.seq_decoder.clone(),
            set_decoder: self.set_decoder.clone(),
        }
    }

    fn decoder(&self, head: Head) -> Result<&DecoderParams> {
        match head {
            Head::Set => Ok(&self.set_decoder),
            Head::Sequence => self.seq_decoder.as_ref().ok_or_else(|| {
                Error::Config("the simplified variant has no sequence decoder".into())
            }),
        }
    }

    /// Bidirectional encoding of a token id sequence.
    pub fn encode(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: &[usize],
        dropout: &mut Dropout<'_>,
    ) -> Result<Encoded> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty sequence".into(),
            ));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let k = self.config.arch.encoder_hidden;
        let m = tokens.len();
        let table = tape.param(self.encoder.embedding);
        let mut inputs = Vec::with_capacity(m);
        for &t in tokens {
            let e = tape.embed(table, t)?;
            inputs.push(dropout.apply(tape, e)?);
        }

        let zero = tape.vector(vec![T::zero(); k]);
        let layers = self.encoder.forward.len();
        let mut fwd_states = Vec::new();
        let mut bwd_states = Vec::new();
        for l in 0..layers {
            fwd_states.clear();
            bwd_states.clear();
            let (mut h, mut c) = (zero, zero);
            for &x in &inputs {
                (h, c) = tape.lstm_cell(x, h, c, self.encoder.forward[l])?;
                fwd_states.push((h, c));
            }
            let (mut h, mut c) = (zero, zero);
            let mut rev = Vec::with_capacity(m);
            for &x in inputs.iter().rev() {
                (h, c) = tape.lstm_cell(x, h, c, self.encoder.backward[l])?;
                rev.push((h, c));
            }
            rev.reverse();
            bwd_states.extend(rev);

            if l + 1 < layers {
                let mut next = Vec::with_capacity(m);
                for i in 0..m {
                    let cat = tape.concat(&[fwd_states[i].0, bwd_states[i].0]);
                    next.push(dropout.apply(tape, cat)?);
                }
                inputs = next;
            }
        }
        let rows: Vec<NodeId> = (0..m)
            .map(|i| tape.concat(&[fwd_states[i].0, bwd_states[i].0]))
            .collect();
        let memory = tape.stack_rows(&rows)?;
        Ok(Encoded {
            memory,
            len: m,
            final_forward: fwd_states[m - 1],
            final_backward: bwd_states[0],
        })
    }

    /// Projects `memory` by one attention's `U_a` for repeated querying.
    pub fn prepare_memory(
        &self,
        tape: &mut Tape<'_, T>,
        memory: NodeId,
        params: AttentionParams,
    ) -> Result<AttnMemory> {
        if tape.shape(memory).first().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument("attention over empty memory".into()));
        }
        let u = tape.param(params.u);
        let keys = tape.rows_linear(memory, u)?;
        Ok(AttnMemory {
            values: memory,
            keys,
            params,
        })
    }

    /// Additive attention. Returns `(weights, context)`.
    pub fn attend(
        &self,
        tape: &mut Tape<'_, T>,
        query: NodeId,
        memory: &AttnMemory,
    ) -> Result<(NodeId, NodeId)> {
        let w = tape.param(memory.params.w);
        let v = tape.param(memory.params.v);
        let wq = tape.matvec(w, query)?;
        let pre = tape.add_rows(memory.keys, wq)?;
        let act = tape.tanh(pre);
        let scores = tape.rows_dot(act, v)?;
        let weights = tape.softmax(scores)?;
        let context = tape.weighted_rows(weights, memory.values)?;
        Ok((weights, context))
    }

    /// Prepares the memories `head` attends over. `seq_memory` must be given
    /// exactly when `head` is the set decoder of a full model.
    pub fn decoder_context(
        &self,
        tape: &mut Tape<'_, T>,
        head: Head,
        encoded: &Encoded,
        seq_memory: Option<NodeId>,
    ) -> Result<DecoderContext> {
        let dec = self.decoder(head)?;
        let enc = self.prepare_memory(tape, encoded.memory, dec.enc_attention)?;
        let seq = match (dec.dec_attention, seq_memory) {
            (Some(att), Some(mem)) => Some(self.prepare_memory(tape, mem, att)?),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::Config(
                    "full-variant set decoder needs sequence decoder memory".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Config(match head {
                    Head::Set => "simplified variant takes no sequence decoder memory".into(),
                    Head::Sequence => "sequence decoder takes no sequence decoder memory".into(),
                }))
            }
        };
        Ok(DecoderContext { head, enc, seq })
    }

    /// Initial decoder state from the final encoder states through the
    /// per-layer bridge.
    pub fn initial_state(
        &self,
        tape: &mut Tape<'_, T>,
        ctx: &DecoderContext,
        encoded: &Encoded,
    ) -> Result<DecoderState> {
        let dec = self.decoder(ctx.head)?;
        let h_src = tape.concat(&[encoded.final_forward.0, encoded.final_backward.0]);
        let c_src = tape.concat(&[encoded.final_forward.1, encoded.final_backward.1]);
        let mut layers = Vec::with_capacity(dec.bridge.len());
        for b in &dec.bridge {
            let (hw, hb) = (tape.param(b.h_weight), tape.param(b.h_bias));
            let (cw, cb) = (tape.param(b.c_weight), tape.param(b.c_bias));
            let h = tape.affine(hw, h_src, hb)?;
            let h = tape.tanh(h);
            let c = tape.affine(cw, c_src, cb)?;
            layers.push((h, c));
        }
        let top = layers.last().expect("decoder has layers").0;
        let (_, enc_context) = self.attend(tape, top, &ctx.enc)?;
        let dec_context = match &ctx.seq {
            Some(mem) => Some(self.attend(tape, top, mem)?.1),
            None => None,
        };
        Ok(DecoderState {
            layers,
            enc_context,
            dec_context,
        })
    }

    /// One decoder step: consume `y_prev`, update the recurrent state,
    /// attend, and score the `L + 1` output positions under `mask`.
    pub fn step(
        &self,
        tape: &mut Tape<'_, T>,
        ctx: &DecoderContext,
        state: &DecoderState,
        y_prev: usize,
        mask: &LabelMask,
        dropout: &mut Dropout<'_>,
    ) -> Result<Step<T>> {
        if mask.num_labels() != self.config.num_labels {
            return Err(Error::shape(
                "decoder_step",
                format!(
                    "mask covers {} labels, model has {}",
                    mask.num_labels(),
                    self.config.num_labels
                ),
            ));
        }
        if !mask.admits_any() {
            return Err(Error::NoAdmissible("mask admits no output symbol".into()));
        }
        if y_prev >= self.config.num_labels && y_prev != self.bos() {
            return Err(Error::InvalidArgument(format!(
                "decoder input {y_prev} is neither a label nor bos"
            )));
        }
        let dec = self.decoder(ctx.head)?;
        let table = tape.param(dec.label_embedding);
        let emb = tape.embed(table, y_prev)?;
        let mut parts = vec![emb, state.enc_context];
        if let Some(d) = state.dec_context {
            parts.push(d);
        }
        let input = tape.concat(&parts);
        let mut x = dropout.apply(tape, input)?;

        let mut layers = Vec::with_capacity(dec.layers.len());
        for (l, (&(h, c), &cell)) in state.layers.iter().zip(&dec.layers).enumerate() {
            if l > 0 {
                x = dropout.apply(tape, x)?;
            }
            let (h2, c2) = tape.lstm_cell(x, h, c, cell)?;
            layers.push((h2, c2));
            x = h2;
        }
        let top = x;
        let (_, enc_context) = self.attend(tape, top, &ctx.enc)?;
        let dec_context = match &ctx.seq {
            Some(mem) => Some(self.attend(tape, top, mem)?.1),
            None => None,
        };
        let context = match dec_context {
            Some(d) => tape.concat(&[enc_context, d]),
            None => enc_context,
        };

        let w_d = tape.param(dec.w_d);
        let v_d = tape.param(dec.v_d);
        let w_o = tape.param(dec.w_o);
        let a = tape.matvec(w_d, top)?;
        let b = tape.matvec(v_d, context)?;
        let pre = tape.add(a, b)?;
        let act = tape.tanh(pre);
        let logits = tape.matvec(w_o, act)?;
        let masked = mask.apply(tape.value(logits));
        Ok(Step {
            state: DecoderState {
                layers,
                enc_context,
                dec_context,
            },
            logits,
            masked,
        })
    }

    /// Sequence decoder step.
    pub fn seq_decoder_step(
        &self,
        tape: &mut Tape<'_, T>,
        ctx: &DecoderContext,
        state: &DecoderState,
        y_prev: usize,
        mask: &LabelMask,
        dropout: &mut Dropout<'_>,
    ) -> Result<Step<T>> {
        if ctx.head != Head::Sequence {
            return Err(Error::Config(
                "context was prepared for the set decoder".into(),
            ));
        }
        self.step(tape, ctx, state, y_prev, mask, dropout)
    }

    /// Set decoder step.
    pub fn set_decoder_step(
        &self,
        tape: &mut Tape<'_, T>,
        ctx: &DecoderContext,
        state: &DecoderState,
        y_prev: usize,
        mask: &LabelMask,
        dropout: &mut Dropout<'_>,
    ) -> Result<Step<T>> {
        if ctx.head != Head::Set {
            return Err(Error::Config(
                "context was prepared for the sequence decoder".into(),
            ));
        }
        self.step(tape, ctx, state, y_prev, mask, dropout)
    }

    /// Runs the sequence decoder. With `gold` (labels only, no bos/eos) the
    /// decoder is teacher-forced over bos, gold_1..gold_n and produces
    /// `n + 1` state rows; without it the decoder feeds back its own masked
    /// argmax until eos or `max_len` steps.
    pub fn run_seq_decoder(
        &self,
        tape: &mut Tape<'_, T>,
        encoded: &Encoded,
        gold: Option<&[usize]>,
        max_len: usize,
        dropout: &mut Dropout<'_>,
    ) -> Result<SeqDecoderRun> {
        let ctx = self.decoder_context(tape, Head::Sequence, encoded, None)?;
        let mut state = self.initial_state(tape, &ctx, encoded)?;
        let mut mask = LabelMask::new(self.config.num_labels);
        let mut rows = Vec::new();
        let mut logits = Vec::new();
        let mut masks = Vec::new();
        let mut targets = Vec::new();
        let mut y_prev = self.bos();

        match gold {
            Some(gold) => {
                check_gold(gold, self.config.num_labels)?;
                for t in 0..=gold.len() {
                    let step = self.step(tape, &ctx, &state, y_prev, &mask, dropout)?;
                    let target = gold.get(t).copied().unwrap_or(self.eos());
                    rows.push(step.state.top_hidden());
                    logits.push(step.logits);
                    masks.push(mask.clone());
                    targets.push(target);
                    mask.update(target);
                    y_prev = target;
                    state = step.state;
                }
            }
            None => {
                if max_len == 0 {
                    return Err(Error::InvalidArgument("max_len must be at least 1".into()));
                }
                for _ in 0..max_len {
                    let step = self.step(tape, &ctx, &state, y_prev, &mask, dropout)?;
                    let choice = argmax(&step.masked);
                    rows.push(step.state.top_hidden());
                    logits.push(step.logits);
                    masks.push(mask.clone());
                    targets.push(choice);
                    state = step.state;
                    if choice == self.eos() {
                        break;
                    }
                    mask.update(choice);
                    y_prev = choice;
                }
            }
        }
        let memory = tape.stack_rows(&rows)?;
        Ok(SeqDecoderRun {
            memory,
            rows: rows.len(),
            logits,
            masks,
            targets,
        })
    }
}

/// Gold label sequences must be in range and pairwise distinct.
pub(crate) fn check_gold(gold: &[usize], num_labels: usize) -> Result<()> {
    let mut seen = vec![false; num_labels];
    for &g in gold {
        if g >= num_labels {
            return Err(Error::InvalidArgument(format!(
                "gold label {g} outside label vocabulary of {num_labels}"
            )));
        }
        if std::mem::replace(&mut seen[g], true) {
            return Err(Error::InvalidArgument(format!(
                "gold label sequence repeats label {g}"
            )));
        }
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn is_lstm_param(name: &str) -> bool {
    name.starts_with("encoder.fwd") || name.starts_with("encoder.bwd") || name.contains(".lstm.")
}

fn lstm_params<T: Real, F>(
    params: &mut ParamSet<T>,
    add: &mut F,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<LstmCellParams>
where
    F: FnMut(&mut ParamSet<T>, String, &[usize]) -> Result<ParamId>,
{
    Ok(LstmCellParams {
        w_ih: add(params, format!("{prefix}.w_ih"), &[4 * hidden, input])?,
        w_hh: add(params, format!("{prefix}.w_hh"), &[4 * hidden, hidden])?,
        bias: add(params, format!("{prefix}.bias"), &[4 * hidden])?,
    })
}

fn attention_params<T: Real, F>(
    params: &mut ParamSet<T>,
    add: &mut F,
    prefix: &str,
    size: usize,
    query: usize,
    memory: usize,
) -> Result<AttentionParams>
where
    F: FnMut(&mut ParamSet<T>, String, &[usize]) -> Result<ParamId>,
{
    Ok(AttentionParams {
        v: add(params, format!("{prefix}.v"), &[size])?,
        w: add(params, format!("{prefix}.w"), &[size, query])?,
        u: add(params, format!("{prefix}.u"), &[size, memory])?,
    })
}

fn decoder_params<T: Real, F>(
    params: &mut ParamSet<T>,
    add: &mut F,
    config: &ModelConfig,
    name: &str,
    with_dec_attention: bool,
) -> Result<DecoderParams>
where
    F: FnMut(&mut ParamSet<T>, String, &[usize]) -> Result<ParamId>,
{
    let a = &config.arch;
    let enc_out = 2 * a.encoder_hidden;
    let kd = a.decoder_hidden;
    let context = enc_out + if with_dec_attention { kd } else { 0 };

    let label_embedding = add(
        params,
        format!("{name}.label_embedding"),
        &[config.num_labels + 3, a.embed_size],
    )?;
    let mut bridge = Vec::new();
    for l in 0..a.decoder_layers {
        let p = format!("{name}.bridge.{l}");
        bridge.push(BridgeParams {
            h_weight: add(params, format!("{p}.h_weight"), &[kd, enc_out])?,
            h_bias: add(params, format!("{p}.h_bias"), &[kd])?,
            c_weight: add(params, format!("{p}.c_weight"), &[kd, enc_out])?,
            c_bias: add(params, format!("{p}.c_bias"), &[kd])?,
        });
    }
    let mut layers = Vec::new();
    for l in 0..a.decoder_layers {
        let input = if l == 0 { a.embed_size + context } else { kd };
        layers.push(lstm_params(
            params,
            add,
            &format!("{name}.lstm.{l}"),
            input,
            kd,
        )?);
    }
    let enc_attention = attention_params(
        params,
        add,
        &format!("{name}.attn_enc"),
        a.attention_size,
        kd,
        enc_out,
    )?;
    let dec_attention = if with_dec_attention {
        Some(attention_params(
            params,
            add,
            &format!("{name}.attn_dec"),
            a.attention_size,
            kd,
            kd,
        )?)
    } else {
        None
    };
    Ok(DecoderParams {
        label_embedding,
        bridge,
        layers,
        enc_attention,
        dec_attention,
        w_d: add(params, format!("{name}.out.w_d"), &[kd, kd])?,
        v_d: add(params, format!("{name}.out.v_d"), &[kd, context])?,
        w_o: add(
            params,
            format!("{name}.out.w_o"),
            &[config.num_labels + 1, kd],
        )?,
    })
}
