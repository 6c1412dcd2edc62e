//! Transformer encoder-decoder with a selectable target-length representation.
//!
//! The decoder's first hidden state at step `j` (input token `y_{j-1}`, target
//! length `J`) is built according to [`LengthMode`]:
//!
//! * `None` / `SourceToken`: `emb(y_{j-1}) + pe(j)`; source-token conditioning
//!   lives entirely in the encoder input and adds no parameters.
//! * `ReversePositional`: `emb(y_{j-1}) + pe(r)` with `r = min(L_max, max(0, J - j))`.
//! * `DecoderEmbedding`: `relu(W_len [emb(y_{j-1}) + pe(j) ; lenEmb(r)] + b_len)`.
//!
//! Only the first decoder input is length-aware; all layers above are a
//! standard pre-norm transformer.

mod checkpoint;
mod config;

use std::sync::Arc;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LengthMode, ModelConfig};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tokens::{BOS, PAD, UNK};

pub use crate::params::average_checkpoints;

/// Additive attention bias for disallowed positions.
const MASKED: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// Sinusoidal encoding of `position`: `sin` at even, `cos` at odd indices,
/// frequencies `10000^(-2i/d_model)`.
pub fn positional_encoding<T: Scalar>(position: i64, d_model: usize) -> Result<Vec<T>> {
    if position < 0 {
        return Err(Error::Config(format!("positional encoding of negative position {position}")));
    }
    if d_model == 0 {
        return Err(Error::Empty { op: "positional_encoding" });
    }
    Ok(pe_row(position as usize, d_model))
}

fn pe_row<T: Scalar>(position: usize, d_model: usize) -> Vec<T> {
    (0..d_model)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            T::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct NormIds {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AttnIds {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FfIds {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EncLayerIds {
    ln1: NormIds,
    attn: AttnIds,
    ln2: NormIds,
    ff: FfIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DecLayerIds {
    ln1: NormIds,
    self_attn: AttnIds,
    ln2: NormIds,
    cross: AttnIds,
    ln3: NormIds,
    ff: FfIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LenIds {
    table: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayerIds>,
    enc_ln: NormIds,
    dec: Vec<DecLayerIds>,
    dec_ln: NormIds,
    out_w: usize,
    out_b: usize,
    len: Option<LenIds>,
}

/// Named parameter shapes, in storage order, for a configuration.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let mut out: Vec<(String, Vec<usize>)> = vec![("embed.tokens".into(), vec![v, d])];
    let norm = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.g"), vec![d]));
        out.push((format!("{p}.b"), vec![d]));
    };
    let attn = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{m}"), vec![d, d]));
            out.push((format!("{p}.b{m}"), vec![d]));
        }
    };
    let ff = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.w1"), vec![d, f]));
        out.push((format!("{p}.b1"), vec![f]));
        out.push((format!("{p}.w2"), vec![f, d]));
        out.push((format!("{p}.b2"), vec![d]));
    };
    for l in 0..config.n_layers {
        norm(&mut out, &format!("enc.{l}.ln1"));
        attn(&mut out, &format!("enc.{l}.attn"));
        norm(&mut out, &format!("enc.{l}.ln2"));
        ff(&mut out, &format!("enc.{l}.ff"));
    }
    norm(&mut out, "enc.ln");
    for l in 0..config.n_layers {
        norm(&mut out, &format!("dec.{l}.ln1"));
        attn(&mut out, &format!("dec.{l}.self"));
        norm(&mut out, &format!("dec.{l}.ln2"));
        attn(&mut out, &format!("dec.{l}.cross"));
        norm(&mut out, &format!("dec.{l}.ln3"));
        ff(&mut out, &format!("dec.{l}.ff"));
    }
    norm(&mut out, "dec.ln");
    out.push(("out.w".into(), vec![d, v]));
    out.push(("out.b".into(), vec![v]));
    if config.length_mode == LengthMode::DecoderEmbedding {
        out.push(("len.emb".into(), vec![config.max_len_index + 1, config.d_len]));
        out.push(("len.proj.w".into(), vec![d + config.d_len, d]));
        out.push(("len.proj.b".into(), vec![d]));
    }
    out
}

impl Layout {
    fn build<T: Scalar>(config: &ModelConfig, params: &ParamStore<T>) -> Result<Self> {
        let expected = parameter_shapes(config);
        if expected.len() != params.len() {
            return Err(Error::Format(format!(
                "configuration expects {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| Error::Format(format!("missing parameter '{name}'")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!("parameter '{name}' has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        let id = |n: &str| params.id(n).expect("validated above");
        let norm = |p: &str| NormIds { g: id(&format!("{p}.g")), b: id(&format!("{p}.b")) };
        let attn = |p: &str| AttnIds {
            wq: id(&format!("{p}.wq")),
            bq: id(&format!("{p}.bq")),
            wk: id(&format!("{p}.wk")),
            bk: id(&format!("{p}.bk")),
            wv: id(&format!("{p}.wv")),
            bv: id(&format!("{p}.bv")),
            wo: id(&format!("{p}.wo")),
            bo: id(&format!("{p}.bo")),
        };
        let ff = |p: &str| FfIds {
            w1: id(&format!("{p}.w1")),
            b1: id(&format!("{p}.b1")),
            w2: id(&format!("{p}.w2")),
            b2: id(&format!("{p}.b2")),
        };
        Ok(Layout {
            embed: id("embed.tokens"),
            enc: (0..config.n_layers)
                .map(|l| EncLayerIds {
                    ln1: norm(&format!("enc.{l}.ln1")),
                    attn: attn(&format!("enc.{l}.attn")),
                    ln2: norm(&format!("enc.{l}.ln2")),
                    ff: ff(&format!("enc.{l}.ff")),
                })
                .collect(),
            enc_ln: norm("enc.ln"),
            dec: (0..config.n_layers)
                .map(|l| DecLayerIds {
                    ln1: norm(&format!("dec.{l}.ln1")),
                    self_attn: attn(&format!("dec.{l}.self")),
                    ln2: norm(&format!("dec.{l}.ln2")),
                    cross: attn(&format!("dec.{l}.cross")),
                    ln3: norm(&format!("dec.{l}.ln3")),
                    ff: ff(&format!("dec.{l}.ff")),
                })
                .collect(),
            dec_ln: norm("dec.ln"),
            out_w: id("out.w"),
            out_b: id("out.b"),
            len: (config.length_mode == LengthMode::DecoderEmbedding).then(|| LenIds {
                table: id("len.emb"),
                w: id("len.proj.w"),
                b: id("len.proj.b"),
            }),
        })
    }
}

/// Encoder output for a batch of source sentences.
#[derive(Debug, Clone)]
pub struct Memory<T> {
    /// `[batch, src_len, d_model]`.
    pub states: Arc<Tensor<T>>,
    /// Real (non-padding) length of each source row.
    pub lengths: Vec<usize>,
}

impl<T: Scalar> Memory<T> {
    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn src_len(&self) -> usize {
        self.states.shape()[1]
    }
}

/// One partial target under construction.
///
/// At step `j = prefix.len() + 1` the decoder consumes `y_{j-1}` (BOS for
/// `j = 1`) and predicts `y_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    /// Row of the [`Memory`] this hypothesis reads from.
    pub memory_row: usize,
    /// Generated tokens `y_1 .. y_{j-1}`.
    pub prefix: Vec<usize>,
    /// Target length `J`, when the model conditions on it.
    pub target_len: Option<usize>,
}

impl DecoderState {
    pub fn new(memory_row: usize, target_len: Option<usize>) -> Self {
        DecoderState { memory_row, prefix: Vec::new(), target_len }
    }

    /// Index `j` of the token about to be generated.
    pub fn step(&self) -> usize {
        self.prefix.len() + 1
    }

    /// Remaining-length input `min(l_max, max(0, J - j))`.
    pub fn remaining(&self, l_max: usize) -> Option<usize> {
        self.target_len.map(|big_j| big_j.saturating_sub(self.step()).min(l_max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

struct Graph<'a, T: Scalar> {
    tape: Tape<T>,
    vars: Vec<Var>,
    config: &'a ModelConfig,
    layout: &'a Layout,
    rng: Option<&'a mut Rng>,
}

impl<T: Scalar> TransformerModel<T> {
    /// Fresh model: Xavier-uniform weight matrices, `N(0, 1/sqrt(d))` embeddings,
    /// unit layer-norm gains, zero biases.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            let leaf = name.rsplit('.').next().unwrap_or("");
            let tensor = if name == "embed.tokens" {
                Tensor::normal(shape, 1.0 / (config.d_model as f64).sqrt(), rng)
            } else if name == "len.emb" {
                Tensor::normal(shape, 1.0 / (config.d_len as f64).sqrt(), rng)
            } else if leaf == "g" {
                Tensor::full(shape, T::one())
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                Tensor::uniform(shape, bound, rng)
            };
            params.insert(name, tensor);
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config, &params)?;
        Ok(TransformerModel { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> TransformerModel<U> {
        TransformerModel { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    fn graph<'a>(&'a self, tape: Tape<T>, rng: Option<&'a mut Rng>) -> Graph<'a, T> {
        let mut tape = tape;
        let vars = (0..self.params.len()).map(|id| tape.param(self.params.shared(id))).collect();
        Graph { tape, vars, config: &self.config, layout: &self.layout, rng }
    }

    /// Positional index fed to `pe` for decoder step `j` under this model's mode.
    pub fn decoder_position(&self, j: usize, target_len: Option<usize>) -> usize {
        match (self.config.length_mode, target_len) {
            (LengthMode::ReversePositional, Some(big_j)) => big_j.saturating_sub(j).min(self.config.max_len_index),
            _ => j,
        }
    }

    /// Positional component of the first decoder hidden state at step `j`.
    pub fn decoder_positional_component(&self, j: usize, target_len: Option<usize>) -> Vec<T> {
        pe_row(self.decoder_position(j, target_len), self.config.d_model)
    }

    /// First decoder hidden state for input token `prev_token` at step `j` with target length `J`.
    pub fn decoder_input(&self, prev_token: usize, j: usize, target_len: usize) -> Result<Vec<T>> {
        if j == 0 || target_len == 0 {
            return Err(Error::Config(format!("decoder_input needs j >= 1 and J >= 1 (got j={j}, J={target_len})")));
        }
        let mut g = self.graph(Tape::inference(), None);
        let h0 = g.decoder_h0(&[prev_token], &[j], &[Some(target_len)], 1, 1)?;
        Ok(g.tape.value(h0).data().to_vec())
    }

    /// Runs the encoder over `sources` (ids including tags, length tokens and EOS).
    pub fn encode(&self, sources: &[Vec<usize>]) -> Result<Memory<T>> {
        if sources.is_empty() || sources.iter().any(Vec::is_empty) {
            return Err(Error::Empty { op: "encode" });
        }
        let batch = sources.len();
        let seq = sources.iter().map(Vec::len).max().unwrap();
        let mut ids = vec![PAD; batch * seq];
        let mut mask = vec![false; batch * seq];
        for (b, s) in sources.iter().enumerate() {
            ids[b * seq..b * seq + s.len()].copy_from_slice(s);
            mask[b * seq..b * seq + s.len()].iter_mut().for_each(|m| *m = true);
        }
        let mut g = self.graph(Tape::inference(), None);
        let enc = g.encoder(&ids, &mask, batch, seq)?;
        let states = g.tape.shared_value(enc);
        Ok(Memory { states, lengths: sources.iter().map(Vec::len).collect() })
    }

    /// Log-probabilities of the next token for each decoder state.
    pub fn decode_step(&self, memory: &Memory<T>, states: &[DecoderState]) -> Result<Vec<Vec<T>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        self.check_lengths(states.iter().map(|s| s.target_len))?;
        let n = states.len();
        let t = states.iter().map(|s| s.prefix.len() + 1).max().unwrap();
        let (s_len, d) = (memory.src_len(), self.config.d_model);
        let mut dec_ids = vec![PAD; n * t];
        let mut mem = Vec::with_capacity(n * s_len * d);
        let mut src_mask = vec![false; n * s_len];
        for (b, st) in states.iter().enumerate() {
            if st.memory_row >= memory.batch() {
                return Err(Error::shape("decode_step", format!("memory row {} of {}", st.memory_row, memory.batch())));
            }
            dec_ids[b * t] = BOS;
            dec_ids[b * t + 1..b * t + 1 + st.prefix.len()].copy_from_slice(&st.prefix);
            let row = &memory.states.data()[st.memory_row * s_len * d..(st.memory_row + 1) * s_len * d];
            mem.extend_from_slice(row);
            src_mask[b * s_len..b * s_len + memory.lengths[st.memory_row]].iter_mut().for_each(|m| *m = true);
        }
        let lengths: Vec<Option<usize>> = states.iter().map(|s| s.target_len).collect();
        let mut g = self.graph(Tape::inference(), None);
        let mem = g.tape.constant(Tensor::new(vec![n, s_len, d], mem)?);
        let hidden = g.decoder(mem, &src_mask, s_len, &dec_ids, &lengths, n, t)?;
        let rows: Vec<usize> = states.iter().enumerate().map(|(b, s)| b * t + s.prefix.len()).collect();
        let last = g.tape.gather_rows(hidden, &rows)?;
        let logits = g.project(last)?;
        let logp = g.tape.log_softmax(logits);
        let v = self.config.vocab_size;
        Ok(g.tape.value(logp).data().chunks(v).map(<[T]>::to_vec).collect())
    }

    fn check_lengths(&self, lengths: impl Iterator<Item = Option<usize>>) -> Result<()> {
        if self.config.length_mode == LengthMode::None {
            return Ok(());
        }
        for j in lengths {
            if j.is_none() {
                return Err(Error::data(format!(
                    "length mode {} requires a target length annotation",
                    self.config.length_mode
                )));
            }
        }
        Ok(())
    }

    /// Builds the teacher-forced loss graph. Returns the tape, the loss and the
    /// parameter leaves (indexed by parameter id).
    pub fn loss_graph(&self, batch: &Batch, tape: Tape<T>, rng: Option<&mut Rng>) -> Result<(Tape<T>, Var, Vec<Var>)> {
        self.check_lengths(batch.target_lengths.iter().copied())?;
        let training = rng.is_some();
        let mut g = self.graph(tape, rng);
        let (b, s, t) = (batch.size, batch.src_len, batch.tgt_len);
        let mut src_ids = batch.src_ids.clone();
        let mut dec_ids = batch.dec_input.clone();
        if training && self.config.word_dropout > 0.0 {
            let p = self.config.word_dropout;
            let rng = g.rng.as_deref_mut().expect("training graph carries an rng");
            for (id, &ok) in src_ids.iter_mut().zip(&batch.src_droppable) {
                if ok && rng.bernoulli(p) {
                    *id = UNK;
                }
            }
            for (id, &ok) in dec_ids.iter_mut().zip(&batch.dec_droppable) {
                if ok && rng.bernoulli(p) {
                    *id = UNK;
                }
            }
        }
        let enc = g.encoder(&src_ids, &batch.src_mask, b, s)?;
        let hidden = g.decoder(enc, &batch.src_mask, s, &dec_ids, &batch.target_lengths, b, t)?;
        let logits = g.project(hidden)?;
        let flat = g.tape.reshape(logits, &[b * t, self.config.vocab_size])?;
        let targets: Vec<Option<usize>> =
            batch.dec_target.iter().map(|&id| if id == PAD { None } else { Some(id) }).collect();
        let loss = g.tape.cross_entropy(flat, &targets)?;
        let vars = g.vars;
        Ok((g.tape, loss, vars))
    }

    /// Mean token cross entropy without dropout.
    pub fn forward_loss(&self, batch: &Batch) -> Result<f64> {
        let (tape, loss, _) = self.loss_graph(batch, Tape::inference(), None)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }

    /// Training-mode loss and per-parameter gradients (dropout and word dropout active).
    pub fn loss_and_grads(&self, batch: &Batch, rng: &mut Rng) -> Result<(f64, Vec<Option<Vec<T>>>)> {
        self.gradients(batch, Some(rng))
    }

    /// Loss and gradients; `rng = None` disables all dropout.
    pub fn gradients(&self, batch: &Batch, rng: Option<&mut Rng>) -> Result<(f64, Vec<Option<Vec<T>>>)> {
        let (mut tape, loss, vars) = self.loss_graph(batch, Tape::new(), rng)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss is {value}")));
        }
        let grads = vars.iter().map(|&v| tape.grad_slice(v).map(<[T]>::to_vec)).collect();
        Ok((value, grads))
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    fn p(&self, id: usize) -> Var {
        self.vars[id]
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.config.dropout;
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => self.tape.dropout(x, p, rng, true),
            _ => Ok(x),
        }
    }

    fn norm(&mut self, x: Var, ids: NormIds) -> Result<Var> {
        let (g, b) = (self.p(ids.g), self.p(ids.b));
        self.tape.layer_norm(x, g, b, T::from_f64_lossy(LN_EPS))
    }

    fn linear(&mut self, x: Var, w: usize, b: usize) -> Result<Var> {
        let y = self.tape.matmul(x, self.p(w))?;
        self.tape.add_bias(y, self.p(b))
    }

    fn embed(&mut self, ids: &[usize], batch: usize, seq: usize) -> Result<Var> {
        let table = self.p(self.layout.embed);
        let e = self.tape.embedding(table, ids, &[batch, seq])?;
        Ok(self.tape.scale(e, T::from_f64_lossy((self.config.d_model as f64).sqrt())))
    }

    /// `bias` is `[batch * heads, q_len, k_len]`.
    fn attention(&mut self, q_in: Var, kv_in: Var, bias: Var, ids: AttnIds) -> Result<Var> {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let q = self.linear(q_in, ids.wq, ids.bq)?;
        let k = self.linear(kv_in, ids.wk, ids.bk)?;
        let v = self.linear(kv_in, ids.wv, ids.bv)?;
        let q = self.tape.split_heads(q, heads)?;
        let k = self.tape.split_heads(k, heads)?;
        let v = self.tape.split_heads(v, heads)?;
        let scores = self.tape.batch_matmul(q, k, true)?;
        let scores = self.tape.scale(scores, T::from_f64_lossy(1.0 / (dh as f64).sqrt()));
        let scores = self.tape.add(scores, bias)?;
        let probs = self.tape.softmax(scores);
        let ctx = self.tape.batch_matmul(probs, v, false)?;
        let ctx = self.tape.merge_heads(ctx, heads)?;
        self.linear(ctx, ids.wo, ids.bo)
    }

    fn feed_forward(&mut self, x: Var, ids: FfIds) -> Result<Var> {
        let h = self.linear(x, ids.w1, ids.b1)?;
        let h = self.tape.relu(h);
        let h = self.dropout(h)?;
        self.linear(h, ids.w2, ids.b2)
    }

    /// Key-padding bias `[batch * heads, q_len, k_len]`, optionally causal.
    fn attention_bias(&mut self, key_mask: Option<&[bool]>, batch: usize, q_len: usize, k_len: usize, causal: bool) -> Var {
        let heads = self.config.n_heads;
        let masked = T::from_f64_lossy(MASKED);
        let mut data = vec![T::zero(); batch * heads * q_len * k_len];
        for b in 0..batch {
            for h in 0..heads {
                for q in 0..q_len {
                    let row = ((b * heads + h) * q_len + q) * k_len;
                    for k in 0..k_len {
                        let padded = key_mask.is_some_and(|m| !m[b * k_len + k]);
                        if padded || (causal && k > q) {
                            data[row + k] = masked;
                        }
                    }
                }
            }
        }
        self.tape.constant(Tensor::new(vec![batch * heads, q_len, k_len], data).expect("bias shape"))
    }

    fn positions(&mut self, positions: &[usize], batch: usize, seq: usize) -> Var {
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(batch * seq * d);
        for &p in positions {
            data.extend(pe_row::<T>(p, d));
        }
        self.tape.constant(Tensor::new(vec![batch, seq, d], data).expect("positional shape"))
    }

    fn encoder(&mut self, ids: &[usize], mask: &[bool], batch: usize, seq: usize) -> Result<Var> {
        if seq > self.config.max_seq_len {
            return Err(Error::data(format!("source of length {seq} exceeds max_seq_len {}", self.config.max_seq_len)));
        }
        let e = self.embed(ids, batch, seq)?;
        let pos: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let pe = self.positions(&pos, batch, seq);
        let mut x = self.tape.add(e, pe)?;
        x = self.dropout(x)?;
        let bias = self.attention_bias(Some(mask), batch, seq, seq, false);
        for l in 0..self.layout.enc.len() {
            let ids = self.layout.enc[l];
            let h = self.norm(x, ids.ln1)?;
            let a = self.attention(h, h, bias, ids.attn)?;
            let a = self.dropout(a)?;
            x = self.tape.add(x, a)?;
            let h = self.norm(x, ids.ln2)?;
            let f = self.feed_forward(h, ids.ff)?;
            let f = self.dropout(f)?;
            x = self.tape.add(x, f)?;
        }
        self.norm(x, self.layout.enc_ln)
    }

    /// Length-aware first decoder state for `ids [batch, seq]`; `steps[i]` is `j` of element `i`.
    fn decoder_h0(
        &mut self,
        ids: &[usize],
        steps: &[usize],
        lengths: &[Option<usize>],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        let l_max = self.config.max_len_index;
        let mode = self.config.length_mode;
        let position = |j: usize, len: Option<usize>| match (mode, len) {
            (LengthMode::ReversePositional, Some(big_j)) => big_j.saturating_sub(j).min(l_max),
            _ => j,
        };
        let pos: Vec<usize> = steps.iter().enumerate().map(|(i, &j)| position(j, lengths[i / seq])).collect();
        let e = self.embed(ids, batch, seq)?;
        let pe = self.positions(&pos, batch, seq);
        let h0 = self.tape.add(e, pe)?;
        match self.layout.len {
            Some(len_ids) => {
                let remaining: Vec<usize> = steps
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| lengths[i / seq].map_or(0, |big_j| big_j.saturating_sub(j).min(l_max)))
                    .collect();
                let table = self.p(len_ids.table);
                let le = self.tape.embedding(table, &remaining, &[batch, seq])?;
                let cat = self.tape.concat_last(h0, le)?;
                let proj = self.linear(cat, len_ids.w, len_ids.b)?;
                Ok(self.tape.relu(proj))
            }
            None => Ok(h0),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder(
        &mut self,
        memory: Var,
        src_mask: &[bool],
        src_len: usize,
        ids: &[usize],
        lengths: &[Option<usize>],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        if seq > self.config.max_seq_len + 1 {
            return Err(Error::data(format!("target of {seq} steps exceeds max_seq_len {}", self.config.max_seq_len)));
        }
        let steps: Vec<usize> = (0..batch).flat_map(|_| 1..=seq).collect();
        let h0 = self.decoder_h0(ids, &steps, lengths, batch, seq)?;
        let mut x = self.dropout(h0)?;
        let self_bias = self.attention_bias(None, batch, seq, seq, true);
        let cross_bias = self.attention_bias(Some(src_mask), batch, seq, src_len, false);
        for l in 0..self.layout.dec.len() {
            let ids = self.layout.dec[l];
            let h = self.norm(x, ids.ln1)?;
            let a = self.attention(h, h, self_bias, ids.self_attn)?;
            let a = self.dropout(a)?;
            x = self.tape.add(x, a)?;
            let h = self.norm(x, ids.ln2)?;
            let c = self.attention(h, memory, cross_bias, ids.cross)?;
            let c = self.dropout(c)?;
            x = self.tape.add(x, c)?;
            let h = self.norm(x, ids.ln3)?;
            let f = self.feed_forward(h, ids.ff)?;
            let f = self.dropout(f)?;
            x = self.tape.add(x, f)?;
        }
        self.norm(x, self.layout.dec_ln)
    }

    fn project(&mut self, hidden: Var) -> Result<Var> {
        self.linear(hidden, self.layout.out_w, self.layout.out_b)
    }
}

#[cfg(test)]
mod tests;
