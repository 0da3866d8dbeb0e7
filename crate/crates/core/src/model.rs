//! Model state: every learnable parameter by name, deterministic
//! initialization, binary checkpoints, tape binding, and the end-to-end
//! forward pass from cached features to decoder loss.
//!
//! Checkpoint layout: magic `TGVM`, format version u32 LE, then for each
//! parameter in registration order: name length u32 + UTF-8 name, rank u32,
//! dims u64 LE, row-major f64 LE payload. Loading validates every name and
//! shape against the schema derived from the model config.

use crate::error::{Error, Result};
use crate::features::{ModalityEncoderConfig, SampleFeatures};
use crate::fusion::{
    self, CrossAttention, GlobalProjection, InjectedSequence, RegionMlp,
};
use crate::fsutil::atomic_write;
use crate::moe::{self, ExpertFfn, GateDecision, MoeConfig, MoeLayer};
use crate::seq2seq::vocab::Vocabulary;
use crate::seq2seq::{
    self, AttentionParams, DecoderLayerParams, EncoderLayerParams, FfnParams, LayerNormParams,
    Seq2SeqConfig, Seq2SeqParams,
};
use crate::tensor::{Tape, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"TGVM";
const VERSION: u32 = 1;
const STREAM_MODEL_INIT: u64 = 0x0D31;

/// Hyperparameters of the whole model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq2seq: Seq2SeqConfig,
    pub moe: MoeConfig,
    pub rgb_encoder: ModalityEncoderConfig,
    pub depth_encoder: ModalityEncoderConfig,
    /// Width of the shared projection space for global/region features.
    pub d_proj: usize,
    pub region_mlp_hidden: usize,
    /// Heads in the region-to-global cross-attention.
    pub fusion_heads: usize,
    /// Coverage threshold for mask downsampling.
    pub mask_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq2seq: Seq2SeqConfig::default(),
            moe: MoeConfig::default(),
            rgb_encoder: ModalityEncoderConfig::rgb_default(),
            depth_encoder: ModalityEncoderConfig::depth_default(),
            d_proj: 32,
            region_mlp_hidden: 64,
            fusion_heads: 4,
            mask_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.seq2seq.validate()?;
        self.rgb_encoder.validate()?;
        self.depth_encoder.validate()?;
        if self.moe.enabled {
            self.moe.validate()?;
        }
        if self.moe.d_model != self.seq2seq.d_model {
            return Err(Error::Config(format!(
                "moe.d_model {} must equal seq2seq.d_model {}",
                self.moe.d_model, self.seq2seq.d_model
            )));
        }
        if !self.seq2seq.d_model.is_multiple_of(self.fusion_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by fusion_heads {}",
                self.seq2seq.d_model, self.fusion_heads
            )));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Init {
    FanIn,
    /// Fan-in scaled by an extra 0.1: residual-branch output projections
    /// start small so an untrained model's logits sit near uniform.
    OutputProj,
    Zeros,
    Ones,
    Embedding,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape, init }
}

fn attention_specs(prefix: &str, q_in: usize, kv_in: usize, d: usize, out: &mut Vec<ParamSpec>) {
    out.push(spec(format!("{prefix}.wq"), vec![q_in, d], Init::FanIn));
    out.push(spec(format!("{prefix}.wk"), vec![kv_in, d], Init::FanIn));
    out.push(spec(format!("{prefix}.wv"), vec![kv_in, d], Init::FanIn));
    out.push(spec(format!("{prefix}.wo"), vec![d, d], Init::OutputProj));
}

fn ln_specs(prefix: &str, d: usize, out: &mut Vec<ParamSpec>) {
    out.push(spec(format!("{prefix}.g"), vec![d], Init::Ones));
    out.push(spec(format!("{prefix}.b"), vec![d], Init::Zeros));
}

fn ffn_specs(prefix: &str, d: usize, width: usize, out: &mut Vec<ParamSpec>) {
    out.push(spec(format!("{prefix}.w1"), vec![d, width], Init::FanIn));
    out.push(spec(format!("{prefix}.b1"), vec![width], Init::Zeros));
    out.push(spec(format!("{prefix}.w2"), vec![width, d], Init::OutputProj));
    out.push(spec(format!("{prefix}.b2"), vec![d], Init::Zeros));
}

/// The full parameter schema, in registration (= checkpoint) order.
#[allow(clippy::vec_init_then_push)]
fn schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.seq2seq.d_model;
    let p = cfg.d_proj;
    let (er, ed) = (cfg.rgb_encoder.embed_dim, cfg.depth_encoder.embed_dim);
    let mut out = Vec::new();

    out.push(spec("global_proj.rgb.w", vec![er, p], Init::FanIn));
    out.push(spec("global_proj.rgb.b", vec![p], Init::Zeros));
    out.push(spec("global_proj.depth.w", vec![ed, p], Init::FanIn));
    out.push(spec("global_proj.depth.b", vec![p], Init::Zeros));

    out.push(spec("region_proj.rgb.w", vec![er, p], Init::FanIn));
    out.push(spec("region_proj.rgb.b", vec![p], Init::Zeros));
    out.push(spec("region_proj.depth.w", vec![ed, p], Init::FanIn));
    out.push(spec("region_proj.depth.b", vec![p], Init::Zeros));
    out.push(spec("region_mlp.w1", vec![2 * p, cfg.region_mlp_hidden], Init::FanIn));
    out.push(spec("region_mlp.b1", vec![cfg.region_mlp_hidden], Init::Zeros));
    out.push(spec("region_mlp.w2", vec![cfg.region_mlp_hidden, d], Init::FanIn));
    out.push(spec("region_mlp.b2", vec![d], Init::Zeros));

    attention_specs("xattn", d, p, d, &mut out);

    if cfg.moe.enabled {
        out.push(spec("moe.gate", vec![cfg.moe.num_experts, d], Init::FanIn));
        for i in 0..cfg.moe.num_experts {
            ffn_specs(&format!("moe.expert{i}"), d, cfg.moe.expert_hidden, &mut out);
        }
    }

    out.push(spec("embed.tok", vec![cfg.seq2seq.vocab_size, d], Init::Embedding));
    out.push(spec("embed.enc_pos", vec![cfg.seq2seq.max_len, d], Init::Embedding));
    out.push(spec("embed.dec_pos", vec![cfg.seq2seq.max_len, d], Init::Embedding));

    for i in 0..cfg.seq2seq.n_enc_layers {
        ln_specs(&format!("enc{i}.ln1"), d, &mut out);
        attention_specs(&format!("enc{i}.attn"), d, d, d, &mut out);
        ln_specs(&format!("enc{i}.ln2"), d, &mut out);
        ffn_specs(&format!("enc{i}.ffn"), d, cfg.seq2seq.ffn_width, &mut out);
    }
    for i in 0..cfg.seq2seq.n_dec_layers {
        ln_specs(&format!("dec{i}.ln1"), d, &mut out);
        attention_specs(&format!("dec{i}.self"), d, d, d, &mut out);
        ln_specs(&format!("dec{i}.ln2"), d, &mut out);
        attention_specs(&format!("dec{i}.cross"), d, d, d, &mut out);
        ln_specs(&format!("dec{i}.ln3"), d, &mut out);
        ffn_specs(&format!("dec{i}.ffn"), d, cfg.seq2seq.ffn_width, &mut out);
    }

    out.push(spec("lm_head", vec![d, cfg.seq2seq.vocab_size], Init::FanIn));
    out
}

/// All learnable parameters plus the configuration they belong to.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl ModelState {
    /// Fresh parameters, deterministic in `(config, seed)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_MODEL_INIT);
        let mut params = Vec::new();
        let mut by_name = HashMap::new();
        for s in schema(&config) {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::FanIn => {
                    let scale = 1.0 / (s.shape[0] as f64).sqrt();
                    (0..n).map(|_| standard_normal(&mut rng) * scale).collect()
                }
                Init::OutputProj => {
                    let scale = 0.1 / (s.shape[0] as f64).sqrt();
                    (0..n).map(|_| standard_normal(&mut rng) * scale).collect()
                }
                Init::Embedding => (0..n).map(|_| standard_normal(&mut rng) * 0.02).collect(),
            };
            by_name.insert(s.name.clone(), params.len());
            params.push(Param { name: s.name, shape: s.shape, data });
        }
        Ok(Self { config, params, by_name })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> &Param {
        &self.params[self.by_name[name]]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        &mut self.params[self.by_name[name]]
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.data.len()).collect()
    }

    // ── Checkpoints ─────────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        atomic_write(path, &buf)
    }

    /// Load a checkpoint, validating every parameter name and shape against
    /// the schema implied by `config`.
    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let bytes = std::fs::read(path)?;
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a model checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut pos = 8usize;
        let mut loaded: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        while pos < bytes.len() {
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                if *pos + n > bytes.len() {
                    return Err(Error::Format("checkpoint truncated".into()));
                }
                let s = &bytes[*pos..*pos + n];
                *pos += n;
                Ok(s)
            };
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?
                .to_string();
            let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let data: Vec<f64> = take(&mut pos, 8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            order.push(name.clone());
            loaded.insert(name, (shape, data));
        }

        let mut params = Vec::new();
        let mut by_name = HashMap::new();
        for s in schema(&config) {
            let (shape, data) = loaded.remove(&s.name).ok_or_else(|| Error::CheckpointShape {
                name: s.name.clone(),
                got: vec![],
                expected: s.shape.clone(),
            })?;
            if shape != s.shape {
                return Err(Error::CheckpointShape {
                    name: s.name,
                    got: shape,
                    expected: s.shape,
                });
            }
            by_name.insert(s.name.clone(), params.len());
            params.push(Param { name: s.name, shape, data });
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::Format(format!(
                "checkpoint contains parameter {extra:?} not present in the model config"
            )));
        }
        Ok(Self { config, params, by_name })
    }

    // ── Tape binding ────────────────────────────────────────────────

    /// Insert every parameter into the tape as a gradient-tracked leaf and
    /// expose the typed views the forward pass needs.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let mut ids = Vec::with_capacity(self.params.len());
        let mut by_name = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let id = tape.leaf(p.data.clone(), p.shape.clone(), true);
            by_name.insert(p.name.clone(), id);
            ids.push(id);
        }
        let id = |name: &str| by_name[name];
        let attn = |prefix: &str| AttentionParams {
            w_q: id(&format!("{prefix}.wq")),
            w_k: id(&format!("{prefix}.wk")),
            w_v: id(&format!("{prefix}.wv")),
            w_o: id(&format!("{prefix}.wo")),
        };
        let ln = |prefix: &str| LayerNormParams {
            gamma: id(&format!("{prefix}.g")),
            beta: id(&format!("{prefix}.b")),
        };
        let ffn = |prefix: &str| FfnParams {
            w1: id(&format!("{prefix}.w1")),
            b1: id(&format!("{prefix}.b1")),
            w2: id(&format!("{prefix}.w2")),
            b2: id(&format!("{prefix}.b2")),
        };

        let cfg = &self.config;
        let moe_layer = cfg.moe.enabled.then(|| MoeLayer {
            gate: id("moe.gate"),
            experts: (0..cfg.moe.num_experts)
                .map(|i| {
                    let f = ffn(&format!("moe.expert{i}"));
                    ExpertFfn { w1: f.w1, b1: f.b1, w2: f.w2, b2: f.b2 }
                })
                .collect(),
        });

        BoundModel {
            global_proj: GlobalProjection {
                w_rgb: id("global_proj.rgb.w"),
                b_rgb: id("global_proj.rgb.b"),
                w_depth: id("global_proj.depth.w"),
                b_depth: id("global_proj.depth.b"),
            },
            region_mlp: RegionMlp {
                w_rgb: id("region_proj.rgb.w"),
                b_rgb: id("region_proj.rgb.b"),
                w_depth: id("region_proj.depth.w"),
                b_depth: id("region_proj.depth.b"),
                w1: id("region_mlp.w1"),
                b1: id("region_mlp.b1"),
                w2: id("region_mlp.w2"),
                b2: id("region_mlp.b2"),
            },
            cross_attention: CrossAttention {
                w_q: id("xattn.wq"),
                w_k: id("xattn.wk"),
                w_v: id("xattn.wv"),
                w_o: id("xattn.wo"),
                n_heads: cfg.fusion_heads,
                d_head: cfg.seq2seq.d_model / cfg.fusion_heads,
            },
            moe_layer,
            seq2seq: Seq2SeqParams {
                tok_embed: id("embed.tok"),
                enc_pos: id("embed.enc_pos"),
                dec_pos: id("embed.dec_pos"),
                enc_layers: (0..cfg.seq2seq.n_enc_layers)
                    .map(|i| EncoderLayerParams {
                        ln1: ln(&format!("enc{i}.ln1")),
                        attn: attn(&format!("enc{i}.attn")),
                        ln2: ln(&format!("enc{i}.ln2")),
                        ffn: ffn(&format!("enc{i}.ffn")),
                    })
                    .collect(),
                dec_layers: (0..cfg.seq2seq.n_dec_layers)
                    .map(|i| DecoderLayerParams {
                        ln1: ln(&format!("dec{i}.ln1")),
                        self_attn: attn(&format!("dec{i}.self")),
                        ln2: ln(&format!("dec{i}.ln2")),
                        cross_attn: attn(&format!("dec{i}.cross")),
                        ln3: ln(&format!("dec{i}.ln3")),
                        ffn: ffn(&format!("dec{i}.ffn")),
                    })
                    .collect(),
                lm_head: id("lm_head"),
            },
            param_ids: ids,
        }
    }
}

/// Typed views over one tape binding of the model.
pub struct BoundModel {
    /// Leaf ids aligned with [`ModelState::params`] order.
    pub param_ids: Vec<TensorId>,
    pub global_proj: GlobalProjection,
    pub region_mlp: RegionMlp,
    pub cross_attention: CrossAttention,
    pub moe_layer: Option<MoeLayer>,
    pub seq2seq: Seq2SeqParams,
}

/// Gradients for every parameter, aligned with `ModelState::params` order.
/// Parameters untouched by the loss get zero vectors.
pub fn collect_gradients(tape: &Tape, bound: &BoundModel) -> Vec<Vec<f64>> {
    bound
        .param_ids
        .iter()
        .map(|&id| tape.grad(id).expect("backward not run").to_vec())
        .collect()
}

/// Everything downstream of the encoder for one sample.
pub struct PipelineOutput {
    /// Final encoder states after region re-injection.
    pub encoder_states: TensorId,
    pub encoder_mask: Vec<bool>,
    pub decisions: Vec<GateDecision>,
    pub injected: InjectedSequence,
}

/// Run features + question through fusion, encoding, cross-attention, and
/// the (optional) MoE layer, producing the states the decoder reads.
pub fn encode_pipeline(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    vocab: &Vocabulary,
    question: &str,
    features: &SampleFeatures,
) -> Result<PipelineOutput> {
    let fusionout = fusion::fuse_global(tape, &features.global, &bound.global_proj)?;
    let region_tokens: Vec<TensorId> = features
        .regions
        .iter()
        .map(|r| fusion::region_mlp(tape, r, &bound.region_mlp))
        .collect::<Result<_>>()?;
    let injected =
        fusion::inject(tape, question, &region_tokens, vocab, bound.seq2seq.tok_embed)?;
    let encoded = seq2seq::encode_sequence(tape, &injected, &bound.seq2seq, &config.seq2seq)?;

    let (states, decisions) = if injected.placeholder_positions.is_empty() {
        (encoded.states, Vec::new())
    } else {
        let ctx = tape.select_rows(encoded.states, &injected.placeholder_positions)?;
        let attended = fusion::cross_attend(tape, ctx, fusionout.memory, &bound.cross_attention)?;
        let (fused, decisions) = match (&bound.moe_layer, config.moe.enabled) {
            (Some(layer), true) => {
                let out = moe::moe_forward(tape, attended.output, layer, &config.moe)?;
                (out.output, out.decisions)
            }
            _ => (attended.output, Vec::new()),
        };
        let states = fusion::reinject(
            tape,
            encoded.states,
            &injected.placeholder_positions,
            Some(fused),
        )?;
        (states, decisions)
    };

    Ok(PipelineOutput {
        encoder_states: states,
        encoder_mask: encoded.attention_mask,
        decisions,
        injected,
    })
}

/// Full training-path forward: pipeline + teacher-forced loss.
pub fn full_forward(
    tape: &mut Tape,
    bound: &BoundModel,
    config: &ModelConfig,
    vocab: &Vocabulary,
    question: &str,
    features: &SampleFeatures,
    targets: &[usize],
) -> Result<(TensorId, Vec<GateDecision>)> {
    let pipeline = encode_pipeline(tape, bound, config, vocab, question, features)?;
    let loss = seq2seq::decode_loss(
        tape,
        pipeline.encoder_states,
        &pipeline.encoder_mask,
        targets,
        &bound.seq2seq,
        &config.seq2seq,
    )?;
    Ok((loss, pipeline.decisions))
}
