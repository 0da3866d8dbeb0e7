//! Frozen-model prediction: greedy generation with answer normalization for
//! open-form tasks, likelihood ranking over the candidate set for
//! closed-form tasks (left/right and multiple-choice).
//!
//! Candidate ranking scores each admissible answer with the teacher-forced
//! decoder loss and takes the cheapest. For left/right the candidates are
//! the two sides; for MCQ they are the option tags named in the question.

use crate::data::{normalize_or_marker, Prediction, TaskKind, TrainRecord};
use crate::error::Result;
use crate::features::SampleFeatures;
use crate::model::{encode_pipeline, ModelState};
use crate::moe::GateDecision;
use crate::parallel;
use crate::seq2seq::vocab::{placeholder, Vocabulary, MAX_REGIONS};
use crate::seq2seq::{decode_loss, generate};
use crate::tensor::Tape;
use crate::train::target_ids;
use std::collections::HashMap;

/// Default generation budget; answers are short.
pub const MAX_NEW_TOKENS: usize = 24;

/// Candidate answers for a closed-set task, in tie-break order.
fn candidates(record: &TrainRecord) -> Option<Vec<String>> {
    match record.task {
        TaskKind::LeftRight => Some(vec!["left".into(), "right".into()]),
        TaskKind::Mcq => {
            // options are the question's region tags minus the anchor <R0>
            let tags: Vec<String> = (1..MAX_REGIONS)
                .map(placeholder)
                .filter(|t| record.question.contains(t.as_str()))
                .collect();
            (!tags.is_empty()).then_some(tags)
        }
        _ => None,
    }
}

/// Predict one answer. Closed-set tasks rank candidates by decoder NLL;
/// open-form tasks decode greedily and normalize.
pub fn predict_answer(
    model: &ModelState,
    vocab: &Vocabulary,
    record: &TrainRecord,
    features: &SampleFeatures,
) -> Result<String> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let pipeline =
        encode_pipeline(&mut tape, &bound, &model.config, vocab, &record.question, features)?;

    if let Some(options) = candidates(record) {
        let mut best: Option<(f64, String)> = None;
        for option in options {
            let targets = target_ids(vocab, &option);
            let loss = decode_loss(
                &mut tape,
                pipeline.encoder_states,
                &pipeline.encoder_mask,
                &targets,
                &bound.seq2seq,
                &model.config.seq2seq,
            )?;
            let nll = tape.value(loss);
            if best.as_ref().is_none_or(|(b, _)| nll < *b) {
                best = Some((nll, option));
            }
        }
        Ok(best.expect("candidate list is non-empty").1)
    } else {
        let ids = generate(
            &mut tape,
            pipeline.encoder_states,
            &pipeline.encoder_mask,
            MAX_NEW_TOKENS,
            &bound.seq2seq,
            &model.config.seq2seq,
        )?;
        Ok(normalize_or_marker(&vocab.decode(&ids), record.task))
    }
}

/// Raw greedy decode without normalization or candidate ranking.
pub fn generate_text(
    model: &ModelState,
    vocab: &Vocabulary,
    question: &str,
    features: &SampleFeatures,
    max_new_tokens: usize,
) -> Result<String> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let pipeline = encode_pipeline(&mut tape, &bound, &model.config, vocab, question, features)?;
    let ids = generate(
        &mut tape,
        pipeline.encoder_states,
        &pipeline.encoder_mask,
        max_new_tokens,
        &bound.seq2seq,
        &model.config.seq2seq,
    )?;
    Ok(vocab.decode(&ids))
}

/// Predict a whole record set (parallel across samples; the model is
/// frozen and shared read-only).
pub fn predict_all(
    model: &ModelState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
) -> Result<Vec<Prediction>> {
    parallel::map_indexed(records.len(), |i| {
        let record = &records[i];
        predict_answer(model, vocab, record, &features[&record.id])
            .map(|answer| Prediction { id: record.id.clone(), answer })
    })
    .into_iter()
    .collect()
}

/// Exact-match rate of pure greedy generation against normalized answers.
/// Used by the overfit harness; no candidate ranking is involved.
pub fn exact_match_rate(
    model: &ModelState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
) -> Result<f64> {
    let outcomes = parallel::map_indexed(records.len(), |i| {
        let record = &records[i];
        let text = generate_text(model, vocab, &record.question, &features[&record.id], MAX_NEW_TOKENS)?;
        Ok::<bool, crate::Error>(normalize_or_marker(&text, record.task) == record.answer_norm)
    });
    let mut hits = 0usize;
    for o in outcomes {
        if o? {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Routing decisions for every region of every record, tagged with task.
pub fn gating_trace(
    model: &ModelState,
    vocab: &Vocabulary,
    records: &[TrainRecord],
    features: &HashMap<String, SampleFeatures>,
) -> Result<Vec<(String, TaskKind, GateDecision)>> {
    let per_record = parallel::map_indexed(records.len(), |i| {
        let record = &records[i];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let pipeline = encode_pipeline(
            &mut tape,
            &bound,
            &model.config,
            vocab,
            &record.question,
            &features[&record.id],
        )?;
        Ok::<_, crate::Error>(
            pipeline
                .decisions
                .into_iter()
                .map(|d| (record.id.clone(), record.task, d))
                .collect::<Vec<_>>(),
        )
    });
    let mut out = Vec::new();
    for r in per_record {
        out.extend(r?);
    }
    Ok(out)
}
