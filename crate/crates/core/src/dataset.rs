//! Dialogue records, label taxonomies, and dataset ingestion.
//!
//! Dataset files are UTF-8 with one JSON record per line:
//!
//! ```text
//! {"id":"s1","task":"intent","turns":[{"speaker":"user","text":"..."}],"ocr_text":"","image_ref":null,"gold_label":"refund"}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Rephraser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Intent,
    ImageScene,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Intent, Task::ImageScene];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Intent => "intent",
            Task::ImageScene => "image_scene",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    ServiceRep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn { speaker: Speaker::User, text: text.into() }
    }

    pub fn service(text: impl Into<String>) -> Self {
        Turn { speaker: Speaker::ServiceRep, text: text.into() }
    }
}

/// One multimodal record: speaker-tagged turns plus precomputed OCR text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueSample {
    pub id: String,
    pub task: Task,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub ocr_text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub gold_label: Option<String>,
}

impl DialogueSample {
    /// Checks the structural invariants that do not depend on a taxonomy.
    /// Returns the offending field and a description.
    fn check_shape(&self) -> Result<(), (&'static str, String)> {
        if self.id.is_empty() {
            return Err(("id", "id must be non-empty".into()));
        }
        match self.task {
            Task::Intent if self.turns.is_empty() => {
                Err(("turns", "intent samples need at least one turn".into()))
            }
            Task::ImageScene
                if self.ocr_text.is_empty()
                    && self.image_ref.as_deref().is_none_or(str::is_empty) =>
            {
                Err(("ocr_text", "image_scene samples need ocr_text or image_ref".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-task ordered label lists. Labels are distinct within a task and the
/// two tasks' label sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelTaxonomy {
    intent: Vec<String>,
    image_scene: Vec<String>,
}

impl LabelTaxonomy {
    pub fn new(intent: Vec<String>, image_scene: Vec<String>) -> Result<Self, DatasetError> {
        let tax = LabelTaxonomy { intent, image_scene };
        tax.validate()?;
        Ok(tax)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let mut seen: HashMap<&str, Task> = HashMap::new();
        for task in Task::ALL {
            for label in self.labels(task) {
                if label.is_empty() {
                    return Err(DatasetError::Taxonomy(format!("empty label in task {task}")));
                }
                if let Some(prev) = seen.insert(label, task) {
                    return Err(DatasetError::Taxonomy(if prev == task {
                        format!("label {label:?} listed twice in task {task}")
                    } else {
                        format!("label {label:?} appears in both {prev} and {task}")
                    }));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let tax: LabelTaxonomy = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Taxonomy(format!("{}: {e}", path.display())))?;
        tax.validate()?;
        Ok(tax)
    }

    pub fn labels(&self, task: Task) -> &[String] {
        match task {
            Task::Intent => &self.intent,
            Task::ImageScene => &self.image_scene,
        }
    }

    pub fn contains(&self, task: Task, label: &str) -> bool {
        self.labels(task).iter().any(|l| l == label)
    }

    pub fn task_of(&self, label: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|&t| self.contains(t, label))
    }

    /// Joint label space, intent labels first.
    pub fn all_labels(&self) -> impl Iterator<Item = &str> {
        self.intent.iter().chain(&self.image_scene).map(String::as_str)
    }
}

/// Train/validation partition, disjoint by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<DialogueSample>,
    pub validation: Vec<DialogueSample>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed field `{field}`: {message}")]
    Malformed { line: usize, field: String, message: String },
    #[error("line {line}: unknown label {label:?} for task {task}")]
    UnknownLabel { line: usize, label: String, task: Task },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("sample {id:?} has no gold_label")]
    MissingLabel { id: String },
    #[error("label {label:?} has {count} sample(s); at least 2 are needed to split")]
    TooFewSamples { label: String, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Loads a dataset file, validating every record against `taxonomy`.
pub fn load_dataset(
    path: impl AsRef<Path>,
    taxonomy: &LabelTaxonomy,
) -> Result<Vec<DialogueSample>, DatasetError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(BufReader::new(file), taxonomy).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Parses line-delimited records from `reader`. Blank lines are skipped.
pub fn read_dataset(
    reader: impl BufRead,
    taxonomy: &LabelTaxonomy,
) -> Result<Vec<DialogueSample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| DatasetError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(&line, lineno)?;
        if let Err((field, message)) = sample.check_shape() {
            return Err(DatasetError::Malformed { line: lineno, field: field.into(), message });
        }
        if let Some(label) = &sample.gold_label {
            if !taxonomy.contains(sample.task, label) {
                return Err(DatasetError::UnknownLabel {
                    line: lineno,
                    label: label.clone(),
                    task: sample.task,
                });
            }
        }
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId { line: lineno, id: sample.id });
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn parse_record(line: &str, lineno: usize) -> Result<DialogueSample, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let message = err.inner().to_string();
        let field = if path == "." || path.is_empty() {
            // missing/unknown field errors report the name inside backticks
            message.split('`').nth(1).unwrap_or("<record>").to_string()
        } else {
            path
        };
        DatasetError::Malformed { line: lineno, field, message }
    })
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[DialogueSample]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for s in samples {
        let line = serde_json::to_string(s).expect("samples always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Options for [`generate_validation`].
#[derive(Debug, Clone)]
pub struct RephraseConfig {
    /// Rephrased copies per training sample.
    pub per_sample: usize,
    /// Failed rephrase calls allowed per source sample before it is skipped.
    pub attempts: usize,
    /// Rephrase requests allowed in flight at once.
    pub workers: usize,
}

impl Default for RephraseConfig {
    fn default() -> Self {
        RephraseConfig { per_sample: 1, attempts: 3, workers: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RephraseOutcome {
    /// Sorted by derived id.
    pub samples: Vec<DialogueSample>,
    /// Ids of source samples dropped after exhausting the retry budget.
    pub skipped: Vec<String>,
}

/// Id of the `copy`-th rephrased copy of `source_id`.
pub fn derived_id(source_id: &str, copy: usize) -> String {
    format!("{source_id}#rephrase-{copy}")
}

/// Builds validation samples by rephrasing every turn of every training
/// sample. Task, gold label, OCR text and image reference are carried over.
pub fn generate_validation(
    train: &[DialogueSample],
    rephraser: &dyn Rephraser,
    cfg: &RephraseConfig,
) -> Result<RephraseOutcome, DatasetError> {
    if cfg.per_sample == 0 {
        return Err(DatasetError::InvalidArgument("per_sample must be at least 1".into()));
    }
    if let Some(s) = train.iter().find(|s| s.gold_label.is_none()) {
        return Err(DatasetError::MissingLabel { id: s.id.clone() });
    }
    let attempts = cfg.attempts.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;

    let results: Vec<Option<Vec<DialogueSample>>> = pool.install(|| {
        use rayon::prelude::*;
        train
            .par_iter()
            .map(|source| rephrase_sample(source, rephraser, cfg.per_sample, attempts).ok())
            .collect()
    });

    let mut outcome = RephraseOutcome::default();
    for (source, copies) in train.iter().zip(results) {
        match copies {
            Some(copies) => outcome.samples.extend(copies),
            None => {
                tracing::warn!(id = %source.id, "rephrase failed after retries; sample skipped");
                outcome.skipped.push(source.id.clone());
            }
        }
    }
    outcome.samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(outcome)
}

fn rephrase_sample(
    source: &DialogueSample,
    rephraser: &dyn Rephraser,
    per_sample: usize,
    attempts: usize,
) -> Result<Vec<DialogueSample>, AgentError> {
    let mut failures = 0;
    let mut rephrase = |text: &str| loop {
        match rephraser.rephrase(text) {
            Ok(v) => return Ok(v),
            Err(e) => {
                failures += 1;
                if failures >= attempts {
                    return Err(e);
                }
            }
        }
    };
    let mut copies = Vec::with_capacity(per_sample);
    for copy in 0..per_sample {
        let mut turns = Vec::with_capacity(source.turns.len());
        for turn in &source.turns {
            let text = if turn.text.is_empty() { String::new() } else { rephrase(&turn.text)? };
            turns.push(Turn { speaker: turn.speaker, text });
        }
        copies.push(DialogueSample { id: derived_id(&source.id, copy), turns, ..source.clone() });
    }
    Ok(copies)
}

/// Seeded per-label split. Each label contributes `round(fraction * n)`
/// samples to validation, clamped so both sides keep at least one.
/// Both sides preserve input order.
pub fn stratified_split(
    samples: &[DialogueSample],
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(DatasetError::InvalidArgument(format!(
            "validation fraction {validation_fraction} not in (0, 1)"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, s) in samples.iter().enumerate() {
        let label = s
            .gold_label
            .as_deref()
            .ok_or_else(|| DatasetError::MissingLabel { id: s.id.clone() })?;
        groups.entry(label).or_default().push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_validation = vec![false; samples.len()];
    for (label, mut members) in groups {
        let n = members.len();
        if n < 2 {
            return Err(DatasetError::TooFewSamples { label: label.to_string(), count: n });
        }
        let take = ((validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        for &idx in &members[..take] {
            in_validation[idx] = true;
        }
    }

    let mut split = DatasetSplit::default();
    for (sample, val) in samples.iter().zip(in_validation) {
        if val {
            split.validation.push(sample.clone());
        } else {
            split.train.push(sample.clone());
        }
    }
    Ok(split)
}
