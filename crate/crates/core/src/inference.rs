//! Rule/classifier arbitration: a classifier labels every sample, and a
//! sufficiently strong fired rule overrides it.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::extract_fenced_block;
use crate::dataset::{DialogueSample, LabelTaxonomy, Speaker};
use crate::predicate::{Matcher, PreparedSample, Rule};
use crate::rulebase::RuleBase;
use crate::transport::{ChatMessage, ChatTransport};

pub const DEFAULT_OVERRIDE_THRESHOLD: f64 = 0.8;
/// Emitted when neither the predictor nor any rule produced a label.
pub const ABSTAIN_LABEL: &str = "__abstain__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Predictor,
    Rule,
    Abstain,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub label: String,
    pub source: PredictionSource,
    pub fired_rule_id: Option<String>,
    /// `None` only when the predictor failed on this sample.
    pub predictor_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictorError {
    /// Endpoint down, timed out, or otherwise unreachable. Counts against
    /// the batch failure budget.
    #[error("predictor unavailable: {0}")]
    Unavailable(String),
    /// The predictor answered, but not with a usable label.
    #[error("invalid predictor reply: {0}")]
    InvalidReply(String),
}

/// A classifier producing exactly one taxonomy label per sample.
pub trait Predictor: Send + Sync {
    fn predict(&self, sample: &DialogueSample) -> Result<String, PredictorError>;
}

fn unit_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Seeded stand-in classifier: returns the gold label with probability
/// `accuracy`, otherwise a different label of the same task. Decisions are a
/// pure function of (seed, sample id).
pub struct StubPredictor {
    accuracy: f64,
    seed: u64,
    taxonomy: LabelTaxonomy,
}

impl StubPredictor {
    pub fn new(accuracy: f64, seed: u64, taxonomy: LabelTaxonomy) -> Self {
        StubPredictor { accuracy: accuracy.clamp(0.0, 1.0), seed, taxonomy }
    }
}

impl Predictor for StubPredictor {
    fn predict(&self, sample: &DialogueSample) -> Result<String, PredictorError> {
        let labels = self.taxonomy.labels(sample.task);
        if labels.is_empty() {
            return Err(PredictorError::InvalidReply(format!("no {} labels in taxonomy", sample.task)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(unit_hash(&[&self.seed.to_le_bytes(), sample.id.as_bytes()]));
        let hit = rng.random::<f64>() < self.accuracy;
        match sample.gold_label.as_deref() {
            Some(gold) if hit => Ok(gold.to_string()),
            Some(gold) => {
                let wrong: Vec<&String> = labels.iter().filter(|l| *l != gold).collect();
                if wrong.is_empty() {
                    Ok(gold.to_string())
                } else {
                    Ok(wrong[rng.random_range(0..wrong.len())].clone())
                }
            }
            None => Ok(labels[rng.random_range(0..labels.len())].clone()),
        }
    }
}

/// Classifier behind a chat-completions endpoint. The reply must hold one
/// fenced JSON block `{"label": "..."}` naming a label of the sample's task.
pub struct RemotePredictor<T> {
    transport: T,
    taxonomy: LabelTaxonomy,
    attempts: usize,
}

impl<T: ChatTransport> RemotePredictor<T> {
    pub fn new(transport: T, taxonomy: LabelTaxonomy) -> Self {
        RemotePredictor { transport, taxonomy, attempts: crate::agents::ATTEMPTS }
    }

    fn prompt(&self, sample: &DialogueSample) -> String {
        let mut out = String::from("Classify this customer-service record.\n");
        for t in &sample.turns {
            let who = if t.speaker == Speaker::User { "user" } else { "service" };
            out.push_str(&format!("{who}: {}\n", t.text));
        }
        if !sample.ocr_text.is_empty() {
            out.push_str(&format!("ocr: {}\n", sample.ocr_text));
        }
        out.push_str(&format!(
            "\nAllowed labels: {}\nReply with one fenced block:\n```json\n{{\"label\": \"...\"}}\n```",
            self.taxonomy.labels(sample.task).join(", ")
        ));
        out
    }

    fn parse(&self, sample: &DialogueSample, reply: &str) -> Result<String, String> {
        let body = extract_fenced_block(reply).map_err(|e| e.to_string())?;
        let value: Value = serde_json::from_str(body).map_err(|e| format!("not JSON: {e}"))?;
        let label = value
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| "field `label` missing or not a string".to_string())?;
        if !self.taxonomy.contains(sample.task, label) {
            return Err(format!("label {label:?} is not a {} label", sample.task));
        }
        Ok(label.to_string())
    }
}

impl<T: ChatTransport> Predictor for RemotePredictor<T> {
    fn predict(&self, sample: &DialogueSample) -> Result<String, PredictorError> {
        let mut messages = vec![ChatMessage::user(self.prompt(sample))];
        let mut last = PredictorError::Unavailable("no attempts made".into());
        for _ in 0..self.attempts {
            match self.transport.complete(&messages, 0.0) {
                Err(e) => last = PredictorError::Unavailable(e.0),
                Ok(reply) => match self.parse(sample, &reply) {
                    Ok(label) => return Ok(label),
                    Err(msg) => {
                        messages.push(ChatMessage::assistant(reply));
                        messages.push(ChatMessage::user(format!("Your reply was rejected: {msg}. Answer again.")));
                        last = PredictorError::InvalidReply(msg);
                    }
                },
            }
        }
        Err(last)
    }
}

/// Orders fired rules: reward descending, then more predicates first, then
/// id ascending.
fn rank(a: &Rule, b: &Rule) -> std::cmp::Ordering {
    b.reward
        .total_cmp(&a.reward)
        .then(b.len().cmp(&a.len()))
        .then(a.id.cmp(&b.id))
}

/// Same-task rules that fire on `sample`, strongest first.
pub fn match_rules<'a>(rb: &'a RuleBase, sample: &DialogueSample) -> Vec<&'a Rule> {
    RuleEngine::new(rb).fired(&PreparedSample::new(sample))
}

/// A rule base with matchers compiled once, for repeated matching.
pub struct RuleEngine<'a> {
    rules: Vec<(&'a Rule, Matcher)>,
}

impl<'a> RuleEngine<'a> {
    pub fn new(rb: &'a RuleBase) -> Self {
        RuleEngine { rules: rb.rules.iter().map(|r| (r, r.matcher())).collect() }
    }

    pub fn fired(&self, sample: &PreparedSample) -> Vec<&'a Rule> {
        let mut fired: Vec<&Rule> = self
            .rules
            .iter()
            .filter(|(r, m)| r.task == sample.task && m.matches(sample))
            .map(|(r, _)| *r)
            .collect();
        fired.sort_by(|a, b| rank(a, b));
        fired
    }
}

/// The top fired rule wins when its reward reaches `override_threshold`;
/// otherwise the predictor's label stands.
pub fn arbitrate(
    sample_id: &str,
    fired: &[&Rule],
    predictor_label: &str,
    override_threshold: f64,
) -> Prediction {
    match fired.first() {
        Some(top) if top.reward >= override_threshold => Prediction {
            id: sample_id.to_string(),
            label: top.label.clone(),
            source: PredictionSource::Rule,
            fired_rule_id: Some(top.id.clone()),
            predictor_label: Some(predictor_label.to_string()),
        },
        _ => Prediction {
            id: sample_id.to_string(),
            label: predictor_label.to_string(),
            source: PredictionSource::Predictor,
            fired_rule_id: None,
            predictor_label: Some(predictor_label.to_string()),
        },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchConfig {
    pub override_threshold: f64,
    /// Unavailable-predictor failures tolerated before the batch errors.
    pub failure_budget: usize,
    pub workers: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { override_threshold: DEFAULT_OVERRIDE_THRESHOLD, failure_budget: 3, workers: 4 }
    }
}

/// What happened during a batch, beyond the predictions themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: usize,
    pub rule_overrides: usize,
    /// Samples where the predictor failed and the top fired rule was used.
    pub rule_fallbacks: Vec<String>,
    /// Samples where the predictor failed and no rule fired.
    pub abstained: Vec<String>,
    pub predictor_failures: usize,
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("predictor unavailable: {failures} failures exceed the budget of {budget}; last: {last}")]
    PredictorUnavailable { failures: usize, budget: usize, last: PredictorError },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Predicts every sample, preserving input order.
pub fn predict_batch(
    rb: &RuleBase,
    predictor: &dyn Predictor,
    samples: &[DialogueSample],
    cfg: &BatchConfig,
) -> Result<(Vec<Prediction>, RunReport), InferenceError> {
    let engine = RuleEngine::new(rb);
    let hard_failures = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| InferenceError::Pool(e.to_string()))?;

    let results: Vec<Option<Result<String, PredictorError>>> = pool.install(|| {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| {
                if stop.load(Ordering::Relaxed) {
                    return None;
                }
                let r = predictor.predict(s);
                if let Err(PredictorError::Unavailable(_)) = &r {
                    if hard_failures.fetch_add(1, Ordering::SeqCst) + 1 > cfg.failure_budget {
                        stop.store(true, Ordering::Relaxed);
                    }
                }
                Some(r)
            })
            .collect()
    });

    let failures = hard_failures.load(Ordering::SeqCst);
    if failures > cfg.failure_budget {
        let last = results
            .iter()
            .rev()
            .flatten()
            .find_map(|r| match r {
                Err(e @ PredictorError::Unavailable(_)) => Some(e.clone()),
                _ => None,
            })
            .expect("a hard failure was counted");
        return Err(InferenceError::PredictorUnavailable { failures, budget: cfg.failure_budget, last });
    }

    let mut report = RunReport { samples: samples.len(), ..Default::default() };
    let mut predictions = Vec::with_capacity(samples.len());
    for (sample, result) in samples.iter().zip(results) {
        let fired = engine.fired(&PreparedSample::new(sample));
        let prediction = match result.expect("no sample is skipped within budget") {
            Ok(label) => {
                let p = arbitrate(&sample.id, &fired, &label, cfg.override_threshold);
                if p.source == PredictionSource::Rule {
                    report.rule_overrides += 1;
                }
                p
            }
            Err(e) => {
                report.predictor_failures += 1;
                tracing::warn!(id = %sample.id, error = %e, "predictor failed on sample");
                match fired.first() {
                    Some(top) => {
                        report.rule_fallbacks.push(sample.id.clone());
                        Prediction {
                            id: sample.id.clone(),
                            label: top.label.clone(),
                            source: PredictionSource::Rule,
                            fired_rule_id: Some(top.id.clone()),
                            predictor_label: None,
                        }
                    }
                    None => {
                        report.abstained.push(sample.id.clone());
                        Prediction {
                            id: sample.id.clone(),
                            label: ABSTAIN_LABEL.to_string(),
                            source: PredictionSource::Abstain,
                            fired_rule_id: None,
                            predictor_label: None,
                        }
                    }
                }
            }
        };
        predictions.push(prediction);
    }
    Ok((predictions, report))
}

/// Serializes predictions as one JSON object per line.
pub fn predictions_to_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("predictions always serialize"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(text: &str) -> Result<Vec<Prediction>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
