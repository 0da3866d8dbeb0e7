//! Sparsely-gated Mixture-of-Experts fusion with distance-based gating.
//!
//! The router picks the Top-K experts by smallest Euclidean distance
//! between the token and a learned gating vector per expert, then weights
//! the selected experts with distances passed through `exp(−d)` and
//! normalized over the selected set. Distance gating avoids the norm bias
//! of inner-product routers, so selection depends only on where a token
//! sits relative to the gating vectors, not on how large it is.
//!
//! Selection itself is discrete and is held constant during backward;
//! gradients flow through the gating weights and the selected experts.

use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::features::Matrix;
use crate::tensor::{Tape, TensorId};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub num_experts: usize,
    pub top_k: usize,
    pub d_model: usize,
    pub expert_hidden: usize,
    pub enabled: bool,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self { num_experts: 4, top_k: 2, d_model: 64, expert_hidden: 128, enabled: true }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::Config(format!(
                "top_k {} must be in 1..={}",
                self.top_k, self.num_experts
            )));
        }
        Ok(())
    }
}

/// The auditable routing record for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision {
    pub token_index: usize,
    /// Selected expert indices, ascending.
    pub selected: Vec<usize>,
    /// Normalized gate weights, aligned with `selected`; sum to 1.
    pub weights: Vec<f64>,
    /// Euclidean distances, aligned with `selected`.
    pub distances: Vec<f64>,
}

/// Top-K selection by smallest distance (ties toward the lower expert
/// index) and `exp(−d)` weights normalized over the selection.
pub fn route(
    token_index: usize,
    token: &[f64],
    gates: &Matrix,
    k: usize,
) -> Result<GateDecision> {
    if k == 0 || k > gates.rows {
        return Err(Error::Config(format!("top_k {k} must be in 1..={}", gates.rows)));
    }
    if token.len() != gates.cols {
        return Err(Error::ShapeMismatch {
            context: "route",
            lhs: vec![token.len()],
            rhs: vec![gates.rows, gates.cols],
        });
    }
    if token.iter().any(|v| !v.is_finite()) || gates.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("route input"));
    }

    let mut by_distance: Vec<(usize, f64)> = (0..gates.rows)
        .map(|i| {
            let d = token
                .iter()
                .zip(gates.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (i, d)
        })
        .collect();
    by_distance.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut picked: Vec<(usize, f64)> = by_distance[..k].to_vec();
    picked.sort_by_key(|&(i, _)| i);

    // exp(−d) normalized over the selection, shifted for stability
    let d_min = picked.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = picked.iter().map(|&(_, d)| (-(d - d_min)).exp()).collect();
    let sum: f64 = exps.iter().sum();

    Ok(GateDecision {
        token_index,
        selected: picked.iter().map(|&(i, _)| i).collect(),
        weights: exps.iter().map(|e| e / sum).collect(),
        distances: picked.iter().map(|&(_, d)| d).collect(),
    })
}

/// Tape-bound parameters of one expert FFN: `d → hidden → d` with ReLU.
#[derive(Clone, Copy, Debug)]
pub struct ExpertFfn {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

fn expert_forward(tape: &mut Tape, x: TensorId, e: &ExpertFfn) -> Result<TensorId> {
    let h = tape.matmul(x, e.w1)?;
    let h = tape.add_row(h, e.b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, e.w2)?;
    tape.add_row(out, e.b2)
}

/// Tape-bound MoE layer: gating matrix `[S, d]` plus the expert stack.
#[derive(Clone, Debug)]
pub struct MoeLayer {
    pub gate: TensorId,
    pub experts: Vec<ExpertFfn>,
}

pub struct MoeOutput {
    /// `[R, d]` fused tokens; equals the input when the layer is disabled.
    pub output: TensorId,
    /// One routing record per token; empty when the layer is disabled.
    pub decisions: Vec<GateDecision>,
}

/// Route every token, run its selected experts, and take the gate-weighted
/// sum. With `enabled = false` the layer is the identity on the input.
pub fn moe_forward(
    tape: &mut Tape,
    tokens: TensorId,
    layer: &MoeLayer,
    cfg: &MoeConfig,
) -> Result<MoeOutput> {
    if !cfg.enabled {
        return Ok(MoeOutput { output: tokens, decisions: Vec::new() });
    }
    cfg.validate()?;
    let n_tokens = tape.shape(tokens)[0];
    let gates = Matrix {
        rows: tape.shape(layer.gate)[0],
        cols: tape.shape(layer.gate)[1],
        data: tape.data(layer.gate).to_vec(),
    };

    let mut decisions = Vec::with_capacity(n_tokens);
    let mut fused_rows = Vec::with_capacity(n_tokens);
    for j in 0..n_tokens {
        let token_row = tape.select_rows(tokens, &[j])?;
        let decision = {
            let start = j * gates.cols;
            route(j, &tape.data(tokens)[start..start + gates.cols], &gates, cfg.top_k)?
        };

        let mut dist_ids = Vec::with_capacity(decision.selected.len());
        let mut expert_outs = Vec::with_capacity(decision.selected.len());
        for &i in &decision.selected {
            let gate_row = tape.select_rows(layer.gate, &[i])?;
            dist_ids.push(tape.euclidean_distance(token_row, gate_row)?);
            expert_outs.push(expert_forward(tape, token_row, &layer.experts[i])?);
        }
        let dists = tape.concat(&dist_ids, 0);
        let dists = tape.reshape(dists, vec![1, decision.selected.len()]);
        let neg = tape.scale(dists, -1.0);
        let weights = tape.softmax(neg, 1);
        let stacked = tape.concat(&expert_outs, 0);
        fused_rows.push(tape.matmul(weights, stacked)?);
        decisions.push(decision);
    }
    let output = tape.concat(&fused_rows, 0);
    Ok(MoeOutput { output, decisions })
}

/// Expert-by-task selection counts.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageTable {
    /// `counts[expert][task.index()]`
    pub counts: Vec<[u64; 4]>,
}

impl UsageTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flat_map(|row| row.iter()).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10}", "expert"));
        for t in TaskKind::ALL {
            out.push_str(&format!("{:>14}", t.label()));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i:<10}"));
            for v in row {
                out.push_str(&format!("{v:>14}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Count (expert, task) co-occurrences over routing decisions.
pub fn expert_usage_report<'a>(
    decisions: impl IntoIterator<Item = (TaskKind, &'a GateDecision)>,
    num_experts: usize,
) -> UsageTable {
    let mut counts = vec![[0u64; 4]; num_experts];
    for (task, decision) in decisions {
        for &expert in &decision.selected {
            counts[expert][task.index()] += 1;
        }
    }
    UsageTable { counts }
}

#[cfg(test)]
mod tests;
