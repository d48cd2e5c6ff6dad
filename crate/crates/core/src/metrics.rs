//! Class-weighted F1 and the per-task evaluation report.
//!
//! DIS and ISS are weighted F1 over intent and image-scene samples. OSS is
//! weighted F1 over the union of both with the joint label space; the plain
//! mean of DIS and ISS is reported alongside it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DialogueSample, LabelTaxonomy, Task};
use crate::inference::Prediction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot score an empty set")]
    Empty,
    #[error("gold label {0:?} is not in the label set")]
    UnknownGoldLabel(String),
    #[error("no prediction for sample {0:?}")]
    MissingPrediction(String),
    #[error("sample {0:?} has no gold label")]
    MissingGold(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class scores for every label in `labels` plus the support-weighted
/// F1. Predictions outside `labels` count only as misses of their gold
/// class.
pub fn class_scores<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    labels: &[S],
) -> Result<(f64, Vec<ClassScore>), MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(MetricError::Empty);
    }
    // (true positives, predicted, support)
    let mut counts: HashMap<&str, (usize, usize, usize)> =
        labels.iter().map(|l| (l.as_ref(), (0, 0, 0))).collect();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        let entry = counts.get_mut(g).ok_or_else(|| MetricError::UnknownGoldLabel(g.to_string()))?;
        entry.2 += 1;
        if g == p {
            entry.0 += 1;
        }
        if let Some(entry) = counts.get_mut(p) {
            entry.1 += 1;
        }
    }

    let n = gold.len() as f64;
    let mut weighted = 0.0;
    let mut scores = Vec::with_capacity(labels.len());
    for label in labels {
        let label = label.as_ref();
        let (tp, predicted, support) = counts[label];
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        weighted += support as f64 / n * f1;
        scores.push(ClassScore { label: label.to_string(), precision, recall, f1, support });
    }
    Ok((weighted, scores))
}

/// `sum_c (support_c / N) * F1_c`.
pub fn weighted_f1<S: AsRef<str>>(gold: &[S], pred: &[S], labels: &[S]) -> Result<f64, MetricError> {
    class_scores(gold, pred, labels).map(|(f1, _)| f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub intent: usize,
    pub image_scene: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Weighted F1 over intent samples; `None` when there are none.
    pub dis: Option<f64>,
    /// Weighted F1 over image-scene samples; `None` when there are none.
    pub iss: Option<f64>,
    /// Weighted F1 over all samples with the joint label space.
    pub oss: f64,
    /// Mean of DIS and ISS when both exist.
    pub oss_mean: Option<f64>,
    pub counts: TaskCounts,
    /// Joint-label-space class table.
    pub classes: Vec<ClassScore>,
}

/// Scores `predictions` against the gold labels of `gold`. Predictions for
/// ids not in `gold` are ignored.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &[DialogueSample],
    taxonomy: &LabelTaxonomy,
) -> Result<EvalReport, MetricError> {
    let by_id: HashMap<&str, &str> = predictions.iter().map(|p| (p.id.as_str(), p.label.as_str())).collect();
    let mut per_task: BTreeMap<Task, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    let (mut all_gold, mut all_pred) = (Vec::new(), Vec::new());
    for s in gold {
        let g = s.gold_label.as_deref().ok_or_else(|| MetricError::MissingGold(s.id.clone()))?;
        let p = *by_id.get(s.id.as_str()).ok_or_else(|| MetricError::MissingPrediction(s.id.clone()))?;
        let entry = per_task.entry(s.task).or_default();
        entry.0.push(g);
        entry.1.push(p);
        all_gold.push(g);
        all_pred.push(p);
    }

    let task_score = |task: Task| -> Result<Option<f64>, MetricError> {
        match per_task.get(&task) {
            None => Ok(None),
            Some((g, p)) => {
                let labels: Vec<&str> = taxonomy.labels(task).iter().map(String::as_str).collect();
                weighted_f1(g, p, &labels).map(Some)
            }
        }
    };
    let dis = task_score(Task::Intent)?;
    let iss = task_score(Task::ImageScene)?;
    let joint: Vec<&str> = taxonomy.all_labels().collect();
    let (oss, classes) = class_scores(&all_gold, &all_pred, &joint)?;
    let count = |t| per_task.get(&t).map_or(0, |(g, _)| g.len());

    Ok(EvalReport {
        dis,
        iss,
        oss,
        oss_mean: dis.zip(iss).map(|(d, i)| (d + i) / 2.0),
        counts: TaskCounts { intent: count(Task::Intent), image_scene: count(Task::ImageScene) },
        classes,
    })
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "DIS {}  ISS {}  OSS {:.4}  (mean of DIS/ISS: {})\nsamples: intent {}, image_scene {}\n\n",
            fmt(self.dis),
            fmt(self.iss),
            self.oss,
            fmt(self.oss_mean),
            self.counts.intent,
            self.counts.image_scene
        );
        let width = self.classes.iter().map(|c| c.label.chars().count()).max().unwrap_or(5).max(5);
        out.push_str(&format!("{:<width$}  precision  recall  f1      support\n", "label"));
        for c in &self.classes {
            out.push_str(&format!(
                "{:<width$}  {:<9.4}  {:<6.4}  {:<6.4}  {}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        out
    }
}
