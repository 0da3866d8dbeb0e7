//! Subcommand implementations, shared by the binary and the test suites.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use svqa_core::data::{
    generate_dataset, read_train_records, score, write_jsonl, Prediction, ScoreReport, TaskKind,
    TrainRecord, TruthRecord,
};
use svqa_core::eval::{gating_trace, predict_all};
use svqa_core::extract::extract_features;
use svqa_core::features::cache::{write_cache, FeatureCache};
use svqa_core::features::{SampleFeatures, ToyEncoders};
use svqa_core::fsutil::atomic_write;
use svqa_core::model::ModelState;
use svqa_core::moe::expert_usage_report;
use svqa_core::seq2seq::vocab::Vocabulary;
use svqa_core::tensor::AdamWState;
use svqa_core::train::{train_epochs, EpochLog, Phase};

pub fn vocab_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("vocab.txt")
}

pub fn phase1_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("phase1.tgvm")
}

pub fn final_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("model.tgvm")
}

pub fn train_log_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("train_log.jsonl")
}

/// Load training records, applying the distance-head drop in file order.
pub fn load_records(cfg: &RunConfig) -> Result<Vec<TrainRecord>> {
    let records = read_train_records(&cfg.paths.dataset)
        .with_context(|| format!("reading dataset {}", cfg.paths.dataset.display()))?;
    if records.is_empty() {
        bail!("dataset {} is empty", cfg.paths.dataset.display());
    }
    let drop = cfg.training.drop_distance_head;
    if drop == 0 {
        return Ok(records);
    }
    let mut dropped = 0usize;
    let kept: Vec<TrainRecord> = records
        .into_iter()
        .filter(|r| {
            if r.task == TaskKind::Distance && dropped < drop {
                dropped += 1;
                false
            } else {
                true
            }
        })
        .collect();
    if kept.is_empty() {
        bail!("drop_distance_head {} removed every sample", drop);
    }
    Ok(kept)
}

fn load_feature_map(
    cfg: &RunConfig,
    records: &[TrainRecord],
) -> Result<HashMap<String, SampleFeatures>> {
    if !cfg.paths.cache.exists() {
        bail!(
            "feature cache {} not found; run `svqa cache-features` first",
            cfg.paths.cache.display()
        );
    }
    let cache = FeatureCache::open(&cfg.paths.cache)
        .with_context(|| format!("opening feature cache {}", cfg.paths.cache.display()))?;
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        map.insert(r.id.clone(), cache.read(&r.id)?);
    }
    Ok(map)
}

pub fn build_vocab(records: &[TrainRecord]) -> Vocabulary {
    let mut corpus = Vec::with_capacity(records.len() * 3);
    for r in records {
        corpus.push(r.question.as_str());
        corpus.push(r.answer_free.as_str());
        corpus.push(r.answer_norm.as_str());
    }
    Vocabulary::from_corpus(corpus)
}

// ── gen-data ────────────────────────────────────────────────────────

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let gen = cfg.gen_config();
    let samples = generate_dataset(&gen)?;
    write_jsonl(&cfg.paths.dataset, &samples)?;
    println!(
        "wrote {} samples (seed {}) to {}",
        samples.len(),
        gen.seed,
        cfg.paths.dataset.display()
    );
    Ok(cfg.paths.dataset.clone())
}

// ── cache-features ──────────────────────────────────────────────────

pub fn cmd_cache_features(cfg: &RunConfig) -> Result<PathBuf> {
    let samples = svqa_core::data::read_dataset(&cfg.paths.dataset)
        .with_context(|| format!("reading dataset {}", cfg.paths.dataset.display()))?;
    if samples.is_empty() {
        bail!("dataset {} is empty", cfg.paths.dataset.display());
    }
    let encoders = ToyEncoders::seeded(
        cfg.model.rgb_encoder,
        cfg.model.depth_encoder,
        cfg.training.seed,
    );
    let records = extract_features(&samples, &encoders, cfg.model.mask_threshold)?;
    write_cache(&cfg.paths.cache, &records)?;
    println!("cached features for {} samples to {}", records.len(), cfg.paths.cache.display());
    Ok(cfg.paths.cache.clone())
}

// ── train ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub phase1_checkpoint: Option<PathBuf>,
    pub logs: Vec<EpochLog>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let features = load_feature_map(cfg, &records)?;
    std::fs::create_dir_all(&cfg.paths.checkpoint_dir)?;

    let vocab = build_vocab(&records);
    vocab.save(&vocab_path(cfg))?;
    let model_cfg = cfg.model_config(vocab.len());
    let mut model = ModelState::init(model_cfg, cfg.training.seed)?;

    let mut logs: Vec<EpochLog> = Vec::new();
    let mut phase1_file = None;

    if cfg.flags.phase1_enabled {
        let mut opt = AdamWState::new(cfg.adamw_config(), &model.param_sizes());
        let phase_logs = train_epochs(
            &mut model,
            &mut opt,
            &vocab,
            &records,
            &features,
            Phase::FreeForm,
            cfg.training.epochs_phase1,
            cfg.training.batch_size,
            cfg.training.seed,
        )?;
        for l in &phase_logs {
            println!("phase {} epoch {:>3} loss {:.6} ({:.2}s)", l.phase, l.epoch, l.loss, l.wall_time_s);
        }
        logs.extend(phase_logs);
        let p1 = phase1_checkpoint_path(cfg);
        model.save(&p1)?;
        phase1_file = Some(p1);
    }

    if cfg.flags.phase2_enabled {
        // phase 2 resumes from the phase-1 checkpoint on disk when phase 1
        // ran; otherwise it trains fresh weights
        if let Some(p1) = &phase1_file {
            model = ModelState::load(p1, model_cfg)?;
        }
        let mut opt = AdamWState::new(cfg.adamw_config(), &model.param_sizes());
        let phase_logs = train_epochs(
            &mut model,
            &mut opt,
            &vocab,
            &records,
            &features,
            Phase::Normalized,
            cfg.training.epochs_phase2,
            cfg.training.batch_size,
            cfg.training.seed,
        )?;
        for l in &phase_logs {
            println!("phase {} epoch {:>3} loss {:.6} ({:.2}s)", l.phase, l.epoch, l.loss, l.wall_time_s);
        }
        logs.extend(phase_logs);
    }

    let final_path = final_checkpoint_path(cfg);
    model.save(&final_path)?;

    let mut log_text = String::new();
    for l in &logs {
        log_text.push_str(&serde_json::to_string(l)?);
        log_text.push('\n');
    }
    atomic_write(&train_log_path(cfg), log_text.as_bytes())?;

    println!("final checkpoint: {}", final_path.display());
    Ok(TrainOutcome { final_checkpoint: final_path, phase1_checkpoint: phase1_file, logs })
}

// ── eval / predict ──────────────────────────────────────────────────

fn load_model_for_inference(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
) -> Result<(ModelState, Vocabulary)> {
    let vpath = vocab_path(cfg);
    let vocab = Vocabulary::load(&vpath)
        .with_context(|| format!("loading vocabulary {} (run `svqa train` first)", vpath.display()))?;
    let model_cfg = cfg.model_config(vocab.len());
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| final_checkpoint_path(cfg));
    let model = ModelState::load(&ckpt, model_cfg)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok((model, vocab))
}

pub fn predictions_with_model(
    cfg: &RunConfig,
    model: &ModelState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
) -> Result<Vec<Prediction>> {
    let features = load_feature_map(cfg, records)?;
    Ok(predict_all(model, vocab, records, &features)?)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ScoreReport> {
    let (model, vocab) = load_model_for_inference(cfg, checkpoint)?;
    let records = load_records(cfg)?;
    let predictions = predictions_with_model(cfg, &model, &vocab, &records)?;
    let truth: Vec<TruthRecord> = records
        .iter()
        .map(|r| TruthRecord { id: r.id.clone(), task: r.task, answer_norm: r.answer_norm.clone() })
        .collect();
    let report = score(&predictions, &truth, cfg.training.distance_tolerance)?;

    std::fs::create_dir_all(&cfg.paths.report_dir)?;
    atomic_write(
        &cfg.paths.report_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    print!("{}", report.render_table());
    Ok(report)
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<PathBuf> {
    let (model, vocab) = load_model_for_inference(cfg, checkpoint)?;
    let records = load_records(cfg)?;
    let predictions = predictions_with_model(cfg, &model, &vocab, &records)?;
    let out_path =
        out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.report_dir.join("predictions.jsonl"));
    write_jsonl(&out_path, &predictions)?;
    println!("wrote {} predictions to {}", predictions.len(), out_path.display());
    Ok(out_path)
}

// ── ablation ────────────────────────────────────────────────────────

/// Published full-scale reference scores for the five flag patterns,
/// annotation only; this desk-scale benchmark cannot reproduce them.
pub const ABLATION_REFERENCE: [(bool, bool, bool, f64); 5] = [
    (false, true, false, 25.59),
    (false, false, true, 63.65),
    (false, true, true, 65.09),
    (true, false, true, 68.13),
    (true, true, true, 72.52),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationCell {
    pub moe: bool,
    pub phase1: bool,
    pub phase2: bool,
    pub score_pct: f64,
    pub reference_pct: f64,
}

pub fn render_ablation_table(cells: &[AblationCell]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:<8} {:<8} {:>10} {:>12}\n",
        "MoE", "Phase1", "Phase2", "score", "reference"
    ));
    let mark = |b: bool| if b { "yes" } else { "no" };
    for c in cells {
        out.push_str(&format!(
            "{:<6} {:<8} {:<8} {:>9.2}% {:>11.2}%\n",
            mark(c.moe),
            mark(c.phase1),
            mark(c.phase2),
            c.score_pct,
            c.reference_pct
        ));
    }
    out.push_str(
        "reference column: published full-scale results, shown for structural\n\
         comparison only; desk-scale scores are not expected to match them.\n",
    );
    out
}

pub fn cmd_ablation(cfg: &RunConfig) -> Result<Vec<AblationCell>> {
    if !cfg.paths.dataset.exists() {
        bail!("dataset {} not found; run `svqa gen-data` first", cfg.paths.dataset.display());
    }
    let mut cells = Vec::with_capacity(5);
    for (i, (moe, p1, p2, reference)) in ABLATION_REFERENCE.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.flags.moe_enabled = *moe;
        sub.flags.phase1_enabled = *p1;
        sub.flags.phase2_enabled = *p2;
        sub.paths.checkpoint_dir = cfg.paths.checkpoint_dir.join(format!("ablation-{i}"));
        sub.paths.report_dir = sub.paths.checkpoint_dir.clone();
        println!("[ablation {}/5] moe={moe} phase1={p1} phase2={p2}", i + 1);
        let outcome = cmd_train(&sub)?;
        let report = cmd_eval(&sub, Some(&outcome.final_checkpoint))?;
        cells.push(AblationCell {
            moe: *moe,
            phase1: *p1,
            phase2: *p2,
            score_pct: report.overall_pct,
            reference_pct: *reference,
        });
    }
    std::fs::create_dir_all(&cfg.paths.report_dir)?;
    atomic_write(
        &cfg.paths.report_dir.join("ablation.json"),
        serde_json::to_string_pretty(&cells)?.as_bytes(),
    )?;
    print!("{}", render_ablation_table(&cells));
    Ok(cells)
}

// ── inspect-gating ──────────────────────────────────────────────────

pub fn cmd_inspect_gating(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<String> {
    let (model, vocab) = load_model_for_inference(cfg, checkpoint)?;
    if !model.config.moe.enabled {
        bail!("the loaded model has no MoE layer (moe_enabled = false); nothing to inspect");
    }
    let records = load_records(cfg)?;
    let features = load_feature_map(cfg, &records)?;
    let trace = gating_trace(&model, &vocab, &records, &features)?;

    let mut out = String::new();
    for (id, task, decision) in &trace {
        let weights: Vec<String> = decision.weights.iter().map(|w| format!("{w:.6}")).collect();
        out.push_str(&format!(
            "{id}\tregion={}\ttask={}\texperts={:?}\tweights=[{}]\n",
            decision.token_index,
            task.label(),
            decision.selected,
            weights.join(", ")
        ));
    }
    let table = expert_usage_report(
        trace.iter().map(|(_, task, d)| (*task, d)),
        model.config.moe.num_experts,
    );
    out.push_str(&table.render());
    print!("{out}");
    Ok(out)
}

/// Compare two score reports field by field (used by the determinism
/// harness; wall-clock values never enter a report).
pub fn reports_identical(a: &ScoreReport, b: &ScoreReport) -> bool {
    serde_json::to_string(a).unwrap() == serde_json::to_string(b).unwrap()
}

/// Loss-relevant fields of a training log: everything except wall time.
pub fn log_fingerprint(logs: &[EpochLog]) -> Vec<(u32, usize, u64)> {
    logs.iter().map(|l| (l.phase, l.epoch, l.loss.to_bits())).collect()
}
