//! Multimodal fusion: global projection, region MLP, placeholder injection,
//! region-to-global cross-attention, and encoder-state re-injection.
//!
//! Functions here build tape subgraphs. Parameters arrive as already-bound
//! tensor ids (see `model::ParamBindings`); feature vectors arrive as plain
//! slices and enter the tape as constants.

use crate::error::{Error, Result};
use crate::features::{GlobalFeatures, RegionFeatures};
use crate::seq2seq::vocab::Vocabulary;
use crate::tensor::{Tape, TensorId};

/// Per-modality linear maps into the shared projection space.
#[derive(Clone, Copy, Debug)]
pub struct GlobalProjection {
    pub w_rgb: TensorId,
    pub b_rgb: TensorId,
    pub w_depth: TensorId,
    pub b_depth: TensorId,
}

/// Region branch: per-modality projections followed by a two-layer ReLU MLP
/// whose output width matches the sequence model.
#[derive(Clone, Copy, Debug)]
pub struct RegionMlp {
    pub w_rgb: TensorId,
    pub b_rgb: TensorId,
    pub w_depth: TensorId,
    pub b_depth: TensorId,
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

/// Multi-head attention of region queries over the 2-token global memory.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
    pub w_o: TensorId,
    pub n_heads: usize,
    pub d_head: usize,
}

/// Fused global representation plus the attention memory built from it.
pub struct GlobalFusion {
    /// `[1, 2·d_proj]` — the concatenated projected features.
    pub fused: TensorId,
    /// `[2, d_proj]` — projected RGB and depth stacked as two memory tokens.
    /// A single fused token would make the attention softmax degenerate
    /// (one key ⇒ weight 1 regardless of the query), so the memory keeps
    /// the modalities as separate rows.
    pub memory: TensorId,
}

fn project(tape: &mut Tape, v: &[f64], w: TensorId, b: TensorId) -> Result<TensorId> {
    let x = tape.constant(v.to_vec(), vec![1, v.len()]);
    let h = tape.matmul(x, w)?;
    tape.add_row(h, b)
}

/// Project both global features and concatenate (`fused`); stack the two
/// projections as attention memory.
pub fn fuse_global(
    tape: &mut Tape,
    features: &GlobalFeatures,
    proj: &GlobalProjection,
) -> Result<GlobalFusion> {
    let rgb = project(tape, &features.rgb, proj.w_rgb, proj.b_rgb)?;
    let depth = project(tape, &features.depth, proj.w_depth, proj.b_depth)?;
    let fused = tape.concat(&[rgb, depth], 1);
    let memory = tape.concat(&[rgb, depth], 0);
    Ok(GlobalFusion { fused, memory })
}

/// Region feature → `[1, d_model]` token embedding:
/// project per modality, concatenate, then `relu(W2·relu(W1·h + b1) + b2)`.
pub fn region_mlp(
    tape: &mut Tape,
    features: &RegionFeatures,
    mlp: &RegionMlp,
) -> Result<TensorId> {
    let rgb = project(tape, &features.rgb, mlp.w_rgb, mlp.b_rgb)?;
    let depth = project(tape, &features.depth, mlp.w_depth, mlp.b_depth)?;
    let h = tape.concat(&[rgb, depth], 1);
    let h1 = tape.matmul(h, mlp.w1)?;
    let h1 = tape.add_row(h1, mlp.b1)?;
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, mlp.w2)?;
    let h2 = tape.add_row(h2, mlp.b2)?;
    Ok(tape.relu(h2))
}

/// Token ids and embeddings of a question with region features written over
/// its placeholder positions.
#[derive(Debug)]
pub struct InjectedSequence {
    pub token_ids: Vec<usize>,
    /// `[L, d_model]`; rows at `placeholder_positions[j]` are exactly the
    /// injected region embeddings.
    pub embeddings: TensorId,
    pub placeholder_positions: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

/// Embed the question and replace each `<Rj>` embedding with region token j.
/// Placeholders must appear in slot order `<R0>, <R1>, …` and their count
/// must equal the number of region features.
pub fn inject(
    tape: &mut Tape,
    question: &str,
    region_tokens: &[TensorId],
    vocab: &Vocabulary,
    embed_table: TensorId,
) -> Result<InjectedSequence> {
    let mut token_ids = vocab.encode(question);
    token_ids.push(Vocabulary::EOS_ID);

    let mut positions = Vec::new();
    for (pos, &id) in token_ids.iter().enumerate() {
        if let Some(slot) = vocab.placeholder_slot(id) {
            if slot != positions.len() {
                return Err(Error::Format(format!(
                    "placeholder <R{slot}> out of order at token {pos}; expected <R{}>",
                    positions.len()
                )));
            }
            positions.push(pos);
        }
    }
    if positions.len() != region_tokens.len() {
        return Err(Error::PlaceholderMismatch {
            expected: region_tokens.len(),
            found: positions.len(),
        });
    }

    let base = tape.embedding_lookup(embed_table, &token_ids)?;
    let embeddings = if region_tokens.is_empty() {
        base
    } else {
        let rows = tape.concat(region_tokens, 0);
        tape.replace_rows(base, rows, &positions)?
    };
    let attention_mask = vec![true; token_ids.len()];
    Ok(InjectedSequence { token_ids, embeddings, placeholder_positions: positions, attention_mask })
}

/// Cross-attention output plus per-head attention weights for diagnostics.
pub struct CrossAttendOutput {
    /// `[R, d_model]` — attended regions with a residual connection back to
    /// the queries, so regions stay distinguishable after fusing in global
    /// context.
    pub output: TensorId,
    /// One `[R, 2]` weight matrix per head; rows sum to 1.
    pub head_weights: Vec<TensorId>,
}

/// Each contextualized region embedding attends over the 2-token global
/// memory: `softmax(QKᵀ/√d_head)·V`, heads concatenated, projected, plus a
/// residual from the query.
pub fn cross_attend(
    tape: &mut Tape,
    region_ctx: TensorId,
    memory: TensorId,
    attn: &CrossAttention,
) -> Result<CrossAttendOutput> {
    let q = tape.matmul(region_ctx, attn.w_q)?;
    let k = tape.matmul(memory, attn.w_k)?;
    let v = tape.matmul(memory, attn.w_v)?;
    let scale = 1.0 / (attn.d_head as f64).sqrt();

    let mut heads = Vec::with_capacity(attn.n_heads);
    let mut head_weights = Vec::with_capacity(attn.n_heads);
    for h in 0..attn.n_heads {
        let (lo, hi) = (h * attn.d_head, (h + 1) * attn.d_head);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores, 1);
        let out = tape.matmul(weights, vh)?;
        heads.push(out);
        head_weights.push(weights);
    }
    let concat = tape.concat(&heads, 1);
    let projected = tape.matmul(concat, attn.w_o)?;
    let output = tape.add(projected, region_ctx)?;
    Ok(CrossAttendOutput { output, head_weights })
}

/// Write fused region rows back over the encoder states at the placeholder
/// positions. Every other row passes through bit-for-bit; `R = 0` is the
/// identity.
pub fn reinject(
    tape: &mut Tape,
    encoder_states: TensorId,
    positions: &[usize],
    fused_rows: Option<TensorId>,
) -> Result<TensorId> {
    match fused_rows {
        None => {
            debug_assert!(positions.is_empty());
            Ok(encoder_states)
        }
        Some(rows) => tape.replace_rows(encoder_states, rows, positions),
    }
}
