//! Batched AdamW training over the full pipeline, with the two-phase
//! curriculum: phase 1 fits free-form answers, phase 2 fits normalized
//! answers.

use crate::data::TrainRecord;
use crate::error::Result;
use crate::features::SampleFeatures;
use crate::model::{collect_gradients, full_forward, ModelState};
use crate::seq2seq::vocab::Vocabulary;
use crate::tensor::{AdamWState, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;

const STREAM_TRAIN_ORDER: u64 = 0x50FF;

/// Which answer column a phase trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Phase 1: free-form answers.
    FreeForm,
    /// Phase 2: normalized answers.
    Normalized,
}

impl Phase {
    pub fn number(self) -> u32 {
        match self {
            Phase::FreeForm => 1,
            Phase::Normalized => 2,
        }
    }

    pub fn target(self, record: &TrainRecord) -> &str {
        match self {
            Phase::FreeForm => &record.answer_free,
            Phase::Normalized => &record.answer_norm,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: u32,
    pub epoch: usize,
    pub loss: f64,
    pub wall_time_s: f64,
}

/// Answer text → target token ids (with terminating `</s>`).
pub fn target_ids(vocab: &Vocabulary, answer: &str) -> Vec<usize> {
    let mut ids = vocab.encode(answer);
    ids.push(Vocabulary::EOS_ID);
    ids
}

/// Train `epochs` epochs of one phase. Sample order reshuffles every epoch
/// from a stream derived from `(seed, phase, epoch)`, so runs are exactly
/// reproducible. Returns one log entry per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    model: &mut ModelState,
    optimizer: &mut AdamWState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
    phase: Phase,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    train_epochs_from(model, optimizer, vocab, records, features, phase, 1, epochs, batch_size, seed)
}

/// [`train_epochs`] with explicit epoch numbering, for callers that train
/// in chunks but need each epoch's shuffle stream to stay distinct.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs_from(
    model: &mut ModelState,
    optimizer: &mut AdamWState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
    phase: Phase,
    start_epoch: usize,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut logs = Vec::with_capacity(epochs);
    for epoch in start_epoch..start_epoch + epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_TRAIN_ORDER + phase.number() as u64 * 1009 + epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let loss = train_step(model, optimizer, vocab, records, features, phase, chunk)?;
            loss_sum += loss * chunk.len() as f64;
        }
        logs.push(EpochLog {
            phase: phase.number(),
            epoch,
            loss: loss_sum / records.len() as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(logs)
}

/// One optimizer step over a batch; returns the mean batch loss.
fn train_step(
    model: &mut ModelState,
    optimizer: &mut AdamWState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
    phase: Phase,
    batch: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let record = &records[i];
        let feats = features
            .get(&record.id)
            .unwrap_or_else(|| panic!("no cached features for sample {}", record.id));
        let targets = target_ids(vocab, phase.target(record));
        let (loss, _) =
            full_forward(&mut tape, &bound, &model.config, vocab, &record.question, feats, &targets)?;
        losses.push(loss);
    }
    let stacked = tape.concat(&losses, 0);
    let total = tape.sum_all(stacked);
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(mean)?;

    let grads = collect_gradients(&tape, &bound);
    let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    let mut param_refs: Vec<&mut [f64]> =
        model.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
    optimizer.step(&mut param_refs, &grad_refs);
    Ok(tape.value(mean))
}

/// Mean loss over a record set without updating anything.
pub fn evaluate_loss(
    model: &ModelState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
    phase: Phase,
) -> Result<f64> {
    let mut total = 0.0;
    for record in records {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let feats = &features[&record.id];
        let targets = target_ids(vocab, phase.target(record));
        let (loss, _) =
            full_forward(&mut tape, &bound, &model.config, vocab, &record.question, feats, &targets)?;
        total += tape.value(loss);
    }
    Ok(total / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};
    use crate::extract::compute_sample_features;
    use crate::features::ToyEncoders;
    use crate::seq2seq::tests::tiny_config;
    use crate::tensor::AdamWConfig;

    fn setup(seed: u64, n: usize) -> (ModelState, Vocabulary, Vec<TrainRecord>, HashMap<String, SampleFeatures>) {
        let gen = GenConfig { n_samples: n, seed, rgb_size: 28, depth_size: 32, ..Default::default() };
        let samples = generate_dataset(&gen).unwrap();
        let mut corpus = Vec::new();
        for s in &samples {
            corpus.push(s.question.clone());
            corpus.push(s.answer_free.clone());
            corpus.push(s.answer_norm.clone());
        }
        let vocab = Vocabulary::from_corpus(corpus.iter().map(|s| s.as_str()));
        let config = tiny_config(vocab.len());
        let encoders = ToyEncoders::seeded(config.rgb_encoder, config.depth_encoder, seed);
        let features: HashMap<String, SampleFeatures> = samples
            .iter()
            .map(|s| {
                (s.id.clone(), compute_sample_features(s, &encoders, config.mask_threshold).unwrap())
            })
            .collect();
        let records: Vec<TrainRecord> = samples
            .iter()
            .map(|s| TrainRecord {
                id: s.id.clone(),
                question: s.question.clone(),
                task: s.task,
                answer_free: s.answer_free.clone(),
                answer_norm: s.answer_norm.clone(),
            })
            .collect();
        let state = ModelState::init(config, seed).unwrap();
        (state, vocab, records, features)
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let (mut model, vocab, records, features) = setup(31, 8);
        let cfg = AdamWConfig { learning_rate: 3e-3, ..Default::default() };
        let mut opt = AdamWState::new(cfg, &model.param_sizes());
        let logs = train_epochs(
            &mut model, &mut opt, &vocab, &records, &features, Phase::Normalized, 10, 4, 31,
        )
        .unwrap();
        assert_eq!(logs.len(), 10);
        assert!(
            logs.last().unwrap().loss < 0.6 * logs[0].loss,
            "loss did not drop: {} -> {}",
            logs[0].loss,
            logs.last().unwrap().loss
        );
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (mut model, vocab, records, features) = setup(33, 6);
            let cfg = AdamWConfig { learning_rate: 1e-3, ..Default::default() };
            let mut opt = AdamWState::new(cfg, &model.param_sizes());
            let logs = train_epochs(
                &mut model, &mut opt, &vocab, &records, &features, Phase::FreeForm, 2, 3, 33,
            )
            .unwrap();
            (logs.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>(), model)
        };
        let (losses_a, model_a) = run();
        let (losses_b, model_b) = run();
        assert_eq!(losses_a, losses_b);
        for (a, b) in model_a.params().iter().zip(model_b.params()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn phase_targets_differ() {
        let (model, vocab, records, features) = setup(35, 6);
        let free = evaluate_loss(&model, &vocab, &records, &features, Phase::FreeForm).unwrap();
        let norm = evaluate_loss(&model, &vocab, &records, &features, Phase::Normalized).unwrap();
        assert!(free.is_finite() && norm.is_finite());
        assert_ne!(free.to_bits(), norm.to_bits());
    }
}
