//! Exact-match scoring with a relative-error rule for distance answers.

use super::{TaskKind, NORMALIZATION_FAILURE};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// One line of a predictions file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
}

/// Ground truth needed to score one sample.
#[derive(Clone, Debug)]
pub struct TruthRecord {
    pub id: String,
    pub task: TaskKind,
    pub answer_norm: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: TaskKind,
    pub total: usize,
    pub correct: usize,
    pub accuracy_pct: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: Vec<TaskScore>,
    pub overall_pct: f64,
    pub total: usize,
    pub correct: usize,
    /// Predictions that carried the normalization-failure marker.
    pub normalization_failures: usize,
    /// Relative-error tolerance used for distance answers.
    pub distance_tolerance: f64,
}

impl ScoreReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>8} {:>8} {:>10}\n", "task", "total", "correct", "accuracy"));
        for t in &self.per_task {
            out.push_str(&format!(
                "{:<12} {:>8} {:>8} {:>9.2}%\n",
                t.task.label(),
                t.total,
                t.correct,
                t.accuracy_pct
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>9.2}%\n",
            "overall", self.total, self.correct, self.overall_pct
        ));
        if self.normalization_failures > 0 {
            out.push_str(&format!("normalization failures: {}\n", self.normalization_failures));
        }
        out
    }
}

fn answers_match(task: TaskKind, prediction: &str, truth: &str, distance_tol: f64) -> bool {
    if prediction == NORMALIZATION_FAILURE {
        return false;
    }
    match task {
        TaskKind::Distance => {
            let (Ok(p), Ok(t)) = (prediction.parse::<f64>(), truth.parse::<f64>()) else {
                return prediction == truth;
            };
            if t == 0.0 {
                return p == 0.0;
            }
            ((p - t) / t).abs() <= distance_tol
        }
        _ => prediction == truth,
    }
}

/// Score predictions against ground truth. The id sets must match exactly.
pub fn score(
    predictions: &[Prediction],
    truth: &[TruthRecord],
    distance_tol: f64,
) -> Result<ScoreReport> {
    let pred_map: HashMap<&str, &str> =
        predictions.iter().map(|p| (p.id.as_str(), p.answer.as_str())).collect();
    if pred_map.len() != predictions.len() {
        return Err(Error::Scoring("duplicate ids in predictions".into()));
    }
    let truth_ids: HashMap<&str, ()> = truth.iter().map(|t| (t.id.as_str(), ())).collect();
    let missing: Vec<&str> = truth
        .iter()
        .filter(|t| !pred_map.contains_key(t.id.as_str()))
        .map(|t| t.id.as_str())
        .collect();
    let extra: Vec<&str> =
        predictions.iter().filter(|p| !truth_ids.contains_key(p.id.as_str())).map(|p| p.id.as_str()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Scoring(format!(
            "id sets differ; missing predictions for {missing:?}, unexpected ids {extra:?}"
        )));
    }

    let mut by_task: HashMap<TaskKind, (usize, usize)> = HashMap::new();
    let mut failures = 0usize;
    let mut correct_total = 0usize;
    for t in truth {
        let pred = pred_map[t.id.as_str()];
        if pred == NORMALIZATION_FAILURE {
            failures += 1;
        }
        let ok = answers_match(t.task, pred, &t.answer_norm, distance_tol);
        let entry = by_task.entry(t.task).or_insert((0, 0));
        entry.0 += 1;
        if ok {
            entry.1 += 1;
            correct_total += 1;
        }
    }

    let per_task = TaskKind::ALL
        .iter()
        .filter_map(|task| {
            by_task.get(task).map(|&(total, correct)| TaskScore {
                task: *task,
                total,
                correct,
                accuracy_pct: 100.0 * correct as f64 / total as f64,
            })
        })
        .collect();

    Ok(ScoreReport {
        per_task,
        overall_pct: 100.0 * correct_total as f64 / truth.len() as f64,
        total: truth.len(),
        correct: correct_total,
        normalization_failures: failures,
        distance_tolerance: distance_tol,
    })
}
