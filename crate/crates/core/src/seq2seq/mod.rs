//! Toy encoder-decoder sequence model: pre-norm transformer stacks with
//! learned absolute positions, teacher-forced training, greedy decoding.
//!
//! There is deliberately no final layer norm after either stack: with
//! zero-initialized attention/FFN output projections the encoder is then
//! exactly the identity on its input embeddings, which the tests rely on.

pub mod vocab;

use crate::error::{Error, Result};
use crate::fusion::InjectedSequence;
use crate::tensor::{Tape, TensorId};
use serde::{Deserialize, Serialize};
use vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub max_len: usize,
    pub pad_id: usize,
    pub eos_id: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0, // set from the vocabulary
            d_model: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            ffn_width: 256,
            max_len: 64,
            pad_id: Vocabulary::PAD_ID,
            eos_id: Vocabulary::EOS_ID,
        }
    }
}

impl Seq2SeqConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size is unset".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
    pub w_o: TensorId,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: TensorId,
    pub beta: TensorId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnParams {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqParams {
    pub tok_embed: TensorId,
    pub enc_pos: TensorId,
    pub dec_pos: TensorId,
    pub enc_layers: Vec<EncoderLayerParams>,
    pub dec_layers: Vec<DecoderLayerParams>,
    pub lm_head: TensorId,
}

/// Contextualized encoder states plus the mask decoders must respect.
pub struct EncoderOutput {
    /// `[L, d_model]`
    pub states: TensorId,
    pub attention_mask: Vec<bool>,
}

const MASK_BIAS: f64 = -1e30;
const LN_EPS: f64 = 1e-5;

/// Additive attention bias: masked keys (and, when causal, future keys)
/// get a large negative constant that underflows to exactly zero weight.
fn attention_bias(tape: &mut Tape, rows: usize, key_mask: &[bool], causal: bool) -> TensorId {
    let cols = key_mask.len();
    let mut bias = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            if !key_mask[j] || (causal && j > i) {
                bias[i * cols + j] = MASK_BIAS;
            }
        }
    }
    tape.constant(bias, vec![rows, cols])
}

#[allow(clippy::too_many_arguments)]
fn multi_head_attention(
    tape: &mut Tape,
    queries: TensorId,
    keys_values: TensorId,
    params: &AttentionParams,
    key_mask: &[bool],
    causal: bool,
    n_heads: usize,
    d_head: usize,
) -> Result<TensorId> {
    let q = tape.matmul(queries, params.w_q)?;
    let k = tape.matmul(keys_values, params.w_k)?;
    let v = tape.matmul(keys_values, params.w_v)?;
    let rows = tape.shape(q)[0];
    let bias = attention_bias(tape, rows, key_mask, causal);
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, bias)?;
        let probs = tape.softmax(scores, 1);
        heads.push(tape.matmul(probs, vh)?);
    }
    let concat = tape.concat(&heads, 1);
    tape.matmul(concat, params.w_o)
}

fn feed_forward(tape: &mut Tape, x: TensorId, p: &FfnParams) -> Result<TensorId> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, p.w2)?;
    tape.add_row(out, p.b2)
}

fn layer_norm(tape: &mut Tape, x: TensorId, p: &LayerNormParams) -> Result<TensorId> {
    tape.layer_norm(x, p.gamma, p.beta, LN_EPS)
}

/// Add the first `len` position embeddings to `x`.
fn add_positions(tape: &mut Tape, x: TensorId, pos_table: TensorId, len: usize) -> Result<TensorId> {
    let indices: Vec<usize> = (0..len).collect();
    let pos = tape.select_rows(pos_table, &indices)?;
    tape.add(x, pos)
}

/// Pre-norm encoder stack over an injected sequence.
pub fn encode_sequence(
    tape: &mut Tape,
    seq: &InjectedSequence,
    params: &Seq2SeqParams,
    cfg: &Seq2SeqConfig,
) -> Result<EncoderOutput> {
    cfg.validate()?;
    let len = seq.token_ids.len();
    if len > cfg.max_len {
        return Err(Error::SequenceTooLong { len, max: cfg.max_len });
    }
    let mut x = add_positions(tape, seq.embeddings, params.enc_pos, len)?;
    for layer in &params.enc_layers {
        let normed = layer_norm(tape, x, &layer.ln1)?;
        let attended = multi_head_attention(
            tape,
            normed,
            normed,
            &layer.attn,
            &seq.attention_mask,
            false,
            cfg.n_heads,
            cfg.d_head(),
        )?;
        x = tape.add(x, attended)?;
        let normed = layer_norm(tape, x, &layer.ln2)?;
        let ff = feed_forward(tape, normed, &layer.ffn)?;
        x = tape.add(x, ff)?;
    }
    Ok(EncoderOutput { states: x, attention_mask: seq.attention_mask.clone() })
}

/// Decoder stack over teacher-forced input ids, returning `[T, vocab]`
/// logits. Self-attention is causal; cross-attention reads the (possibly
/// re-injected) encoder states.
pub fn decoder_logits(
    tape: &mut Tape,
    decoder_input: &[usize],
    encoder_states: TensorId,
    encoder_mask: &[bool],
    params: &Seq2SeqParams,
    cfg: &Seq2SeqConfig,
) -> Result<TensorId> {
    let t_len = decoder_input.len();
    if t_len > cfg.max_len {
        return Err(Error::SequenceTooLong { len: t_len, max: cfg.max_len });
    }
    let emb = tape.embedding_lookup(params.tok_embed, decoder_input)?;
    let mut x = add_positions(tape, emb, params.dec_pos, t_len)?;
    let self_mask = vec![true; t_len];
    for layer in &params.dec_layers {
        let normed = layer_norm(tape, x, &layer.ln1)?;
        let attended = multi_head_attention(
            tape,
            normed,
            normed,
            &layer.self_attn,
            &self_mask,
            true,
            cfg.n_heads,
            cfg.d_head(),
        )?;
        x = tape.add(x, attended)?;
        let normed = layer_norm(tape, x, &layer.ln2)?;
        let crossed = multi_head_attention(
            tape,
            normed,
            encoder_states,
            &layer.cross_attn,
            encoder_mask,
            false,
            cfg.n_heads,
            cfg.d_head(),
        )?;
        x = tape.add(x, crossed)?;
        let normed = layer_norm(tape, x, &layer.ln3)?;
        let ff = feed_forward(tape, normed, &layer.ffn)?;
        x = tape.add(x, ff)?;
    }
    tape.matmul(x, params.lm_head)
}

/// Teacher-forced mean token NLL of `targets` given final encoder states.
/// The decoder input is the target sequence shifted right behind a leading
/// pad token.
pub fn decode_loss(
    tape: &mut Tape,
    encoder_states: TensorId,
    encoder_mask: &[bool],
    targets: &[usize],
    params: &Seq2SeqParams,
    cfg: &Seq2SeqConfig,
) -> Result<TensorId> {
    if targets.is_empty() {
        return Err(Error::AllPadTarget);
    }
    let mut decoder_input = Vec::with_capacity(targets.len());
    decoder_input.push(cfg.pad_id);
    decoder_input.extend_from_slice(&targets[..targets.len() - 1]);
    let logits = decoder_logits(tape, &decoder_input, encoder_states, encoder_mask, params, cfg)?;
    tape.cross_entropy(logits, targets, cfg.pad_id)
}

/// Greedy decoding: argmax at each step (ties toward the lowest token id),
/// stopping at `</s>` or after `max_new_tokens`. The returned sequence
/// includes the terminating `</s>` when one was produced.
pub fn generate(
    tape: &mut Tape,
    encoder_states: TensorId,
    encoder_mask: &[bool],
    max_new_tokens: usize,
    params: &Seq2SeqParams,
    cfg: &Seq2SeqConfig,
) -> Result<Vec<usize>> {
    let mut decoder_input = vec![cfg.pad_id];
    let mut out = Vec::new();
    for _ in 0..max_new_tokens {
        let logits =
            decoder_logits(tape, &decoder_input, encoder_states, encoder_mask, params, cfg)?;
        let data = tape.data(logits);
        let vocab = cfg.vocab_size;
        let last = &data[(decoder_input.len() - 1) * vocab..decoder_input.len() * vocab];
        let mut best = 0usize;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        out.push(best);
        if best == cfg.eos_id {
            break;
        }
        decoder_input.push(best);
        if decoder_input.len() >= cfg.max_len {
            break;
        }
    }
    Ok(out)
}
