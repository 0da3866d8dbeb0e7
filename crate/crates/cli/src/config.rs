//! Run configuration: defaults, TOML file loading, CLI overrides.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use svqa_core::data::GenConfig;
use svqa_core::model::ModelConfig;
use svqa_core::tensor::AdamWConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub cache: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/train.jsonl".into(),
            cache: "data/train.tgfc".into(),
            checkpoint_dir: "runs/default".into(),
            report_dir: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub n_samples: usize,
    pub task_mix: [f64; 4],
    pub world_extent: f64,
    pub camera_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            n_samples: 512,
            task_mix: g.task_mix,
            world_extent: g.world_extent,
            camera_height: g.camera_height,
            min_objects: g.min_objects,
            max_objects: g.max_objects,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub seed: u64,
    /// Drop the first N distance-task samples in file order before training.
    pub drop_distance_head: usize,
    /// Relative-error tolerance for scoring distance answers.
    pub distance_tolerance: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            batch_size: 32,
            epochs_phase1: 1,
            epochs_phase2: 10,
            seed: 0,
            drop_distance_head: 0,
            distance_tolerance: 0.10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Flags {
    pub moe_enabled: bool,
    pub phase1_enabled: bool,
    pub phase2_enabled: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self { moe_enabled: true, phase1_enabled: true, phase2_enabled: true }
    }
}

/// Everything a run needs. A TOML file can set any field; command-line
/// flags override the file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub flags: Flags,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// The generator settings implied by this config. Image resolutions
    /// come from the encoder configs so rendered pixels always match what
    /// the encoders expect.
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_samples: self.data.n_samples,
            seed: self.training.seed,
            task_mix: self.data.task_mix,
            world_extent: self.data.world_extent,
            camera_height: self.data.camera_height,
            rgb_size: self.model.rgb_encoder.image_size,
            depth_size: self.model.depth_encoder.image_size,
            min_objects: self.data.min_objects,
            max_objects: self.data.max_objects,
        }
    }

    pub fn adamw_config(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.training.learning_rate,
            weight_decay: self.training.weight_decay,
            ..Default::default()
        }
    }

    /// Model config with the run flags folded in. `vocab_size` is set by
    /// the caller once the vocabulary exists.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut m = self.model;
        m.seq2seq.vocab_size = vocab_size;
        m.moe.enabled = self.flags.moe_enabled;
        m.moe.d_model = m.seq2seq.d_model;
        m
    }

    pub fn validate(&self) -> Result<()> {
        if !self.flags.phase1_enabled && !self.flags.phase2_enabled {
            bail!("at least one training phase must be enabled");
        }
        Ok(())
    }
}

/// Optional overrides collected from the command line; `None` keeps the
/// config-file (or default) value.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Dataset file (JSON-lines).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Feature cache file.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Directory for checkpoints, vocabulary, and training logs.
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Directory for evaluation reports and predictions.
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,

    /// Samples to generate with gen-data.
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    /// Comma-separated proportions: distance,count,mcq,left_right
    #[arg(long, global = true, value_parser = parse_task_mix)]
    pub task_mix: Option<TaskMix>,
    /// Global seed: scenes, encoder weights, init, and epoch shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs_phase1: Option<usize>,
    #[arg(long, global = true)]
    pub epochs_phase2: Option<usize>,
    #[arg(long, global = true)]
    pub drop_distance_head: Option<usize>,
    #[arg(long, global = true)]
    pub distance_tolerance: Option<f64>,

    #[arg(long, global = true)]
    pub moe_enabled: Option<bool>,
    #[arg(long, global = true)]
    pub phase1_enabled: Option<bool>,
    #[arg(long, global = true)]
    pub phase2_enabled: Option<bool>,

    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub n_heads: Option<usize>,
    #[arg(long, global = true)]
    pub n_enc_layers: Option<usize>,
    #[arg(long, global = true)]
    pub n_dec_layers: Option<usize>,
    #[arg(long, global = true)]
    pub ffn_width: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub num_experts: Option<usize>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub expert_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub d_proj: Option<usize>,
    #[arg(long, global = true)]
    pub region_mlp_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub fusion_heads: Option<usize>,
    #[arg(long, global = true)]
    pub mask_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub rgb_image_size: Option<usize>,
    #[arg(long, global = true)]
    pub rgb_patch_size: Option<usize>,
    #[arg(long, global = true)]
    pub depth_image_size: Option<usize>,
    #[arg(long, global = true)]
    pub depth_patch_size: Option<usize>,
    #[arg(long, global = true)]
    pub rgb_embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub depth_embed_dim: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TaskMix(pub [f64; 4]);

fn parse_task_mix(s: &str) -> Result<TaskMix, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err(format!("expected 4 comma-separated proportions, got {}", parts.len()));
    }
    Ok(TaskMix([parts[0], parts[1], parts[2], parts[3]]))
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.paths.dataset, self.dataset);
        set!(cfg.paths.cache, self.cache);
        set!(cfg.paths.checkpoint_dir, self.checkpoint_dir);
        set!(cfg.paths.report_dir, self.report_dir);
        set!(cfg.data.n_samples, self.n_samples);
        if let Some(TaskMix(mix)) = self.task_mix {
            cfg.data.task_mix = mix;
        }
        set!(cfg.training.seed, self.seed);
        set!(cfg.training.learning_rate, self.learning_rate);
        set!(cfg.training.weight_decay, self.weight_decay);
        set!(cfg.training.batch_size, self.batch_size);
        set!(cfg.training.epochs_phase1, self.epochs_phase1);
        set!(cfg.training.epochs_phase2, self.epochs_phase2);
        set!(cfg.training.drop_distance_head, self.drop_distance_head);
        set!(cfg.training.distance_tolerance, self.distance_tolerance);
        set!(cfg.flags.moe_enabled, self.moe_enabled);
        set!(cfg.flags.phase1_enabled, self.phase1_enabled);
        set!(cfg.flags.phase2_enabled, self.phase2_enabled);
        set!(cfg.model.seq2seq.d_model, self.d_model);
        set!(cfg.model.seq2seq.n_heads, self.n_heads);
        set!(cfg.model.seq2seq.n_enc_layers, self.n_enc_layers);
        set!(cfg.model.seq2seq.n_dec_layers, self.n_dec_layers);
        set!(cfg.model.seq2seq.ffn_width, self.ffn_width);
        set!(cfg.model.seq2seq.max_len, self.max_len);
        set!(cfg.model.moe.num_experts, self.num_experts);
        set!(cfg.model.moe.top_k, self.top_k);
        set!(cfg.model.moe.expert_hidden, self.expert_hidden);
        set!(cfg.model.d_proj, self.d_proj);
        set!(cfg.model.region_mlp_hidden, self.region_mlp_hidden);
        set!(cfg.model.fusion_heads, self.fusion_heads);
        set!(cfg.model.mask_threshold, self.mask_threshold);
        set!(cfg.model.rgb_encoder.image_size, self.rgb_image_size);
        set!(cfg.model.rgb_encoder.patch_size, self.rgb_patch_size);
        set!(cfg.model.depth_encoder.image_size, self.depth_image_size);
        set!(cfg.model.depth_encoder.patch_size, self.depth_patch_size);
        set!(cfg.model.rgb_encoder.embed_dim, self.rgb_embed_dim);
        set!(cfg.model.depth_encoder.embed_dim, self.depth_embed_dim);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.training.learning_rate, 5e-5);
        assert_eq!(cfg.training.weight_decay, 1e-2);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.epochs_phase1, 1);
        assert_eq!(cfg.training.epochs_phase2, 10);
        assert!(cfg.flags.moe_enabled);
    }

    #[test]
    fn toml_roundtrip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.training.seed = 1234;
        cfg.model.seq2seq.d_model = 32;
        cfg.model.moe.top_k = 1;
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let text2 = back.to_toml().unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut cfg = RunConfig::default();
        let ov = Overrides {
            seed: Some(9),
            learning_rate: Some(1e-3),
            moe_enabled: Some(false),
            ..Default::default()
        };
        ov.apply(&mut cfg);
        assert_eq!(cfg.training.seed, 9);
        assert_eq!(cfg.training.learning_rate, 1e-3);
        assert!(!cfg.flags.moe_enabled);
    }

    #[test]
    fn both_phases_disabled_is_invalid() {
        let mut cfg = RunConfig::default();
        cfg.flags.phase1_enabled = false;
        cfg.flags.phase2_enabled = false;
        assert!(cfg.validate().is_err());
    }
}
