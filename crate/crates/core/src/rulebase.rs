//! Rule filtering, dominance pruning, online validation and persistence.
//!
//! File format (version 1):
//!
//! ```text
//! {"version": 1,
//!  "metadata": {"created_at": 0, "dataset_digest": "...", "config_digest": "..."},
//!  "rules": [{"id": "...", "task": "intent", "label": "refund",
//!             "predicates": ["any_text contains \"退货\""],
//!             "reward": 0.9, "confidence": 0.6, "source": "mcts"}]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DialogueSample, LabelTaxonomy, Task};
use crate::predicate::{
    parse_predicate, measure_prepared, PreparedSample, Rule, RuleError, RuleQuality, RuleSource,
    ValidationRecord,
};

pub const RULEBASE_VERSION: u64 = 1;
pub const DEFAULT_MIN_REWARD: f64 = 0.8;
pub const DEFAULT_MIN_PRECISION: f64 = 0.8;
pub const DEFAULT_MIN_SUPPORT: usize = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub dataset_digest: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleBase {
    pub rules: Vec<Rule>,
    pub metadata: Metadata,
}

#[derive(Debug, Error)]
pub enum RulebaseError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported rule-base version {0}")]
    Version(String),
    #[error("schema mismatch at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("rule at `{field}` violates an invariant: {source}")]
    Invariant {
        field: String,
        #[source]
        source: RuleError,
    },
    #[error("duplicate rule id {0:?}")]
    DuplicateId(String),
    #[error("validation set is empty")]
    EmptyValidation,
}

/// Hex SHA-256 of `bytes`, used for dataset and config digests.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Keeps rules with `reward >= min_reward`, in order.
pub fn filter_by_reward(rules: Vec<Rule>, min_reward: f64) -> Vec<Rule> {
    rules.into_iter().filter(|r| r.reward >= min_reward).collect()
}

/// Collapses rules with the same task, label and predicate set to the one
/// with the highest reward (first occurrence on ties). Order of survivors is
/// preserved.
pub fn collapse_duplicates(rules: Vec<Rule>) -> Vec<Rule> {
    let mut best: HashMap<(Task, &str, Vec<String>), usize> = HashMap::new();
    for (i, r) in rules.iter().enumerate() {
        let key = (r.task, r.label.as_str(), r.predicates().iter().map(ToString::to_string).collect());
        best.entry(key)
            .and_modify(|j| {
                if r.reward > rules[*j].reward {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = best.into_values().collect();
    rules
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| keep.contains(&i).then_some(r))
        .collect()
}

/// Removes every rule B for which a same-task, same-label rule A exists with
/// `predicates(A) ⊊ predicates(B)` and `reward(A) > reward(B)`.
///
/// Dominance is transitive, so one pass against the full input reaches the
/// fixed point.
pub fn remove_dominated(rules: Vec<Rule>) -> Vec<Rule> {
    let mut groups: HashMap<(Task, &str), Vec<usize>> = HashMap::new();
    for (i, r) in rules.iter().enumerate() {
        groups.entry((r.task, r.label.as_str())).or_default().push(i);
    }
    let mut dominated = vec![false; rules.len()];
    for members in groups.values() {
        for &b in members {
            let rb = &rules[b];
            dominated[b] = members.iter().any(|&a| {
                let ra = &rules[a];
                ra.reward > rb.reward
                    && ra.len() < rb.len()
                    && ra.predicates().is_subset(rb.predicates())
            });
        }
    }
    rules
        .into_iter()
        .zip(dominated)
        .filter_map(|(r, d)| (!d).then_some(r))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationConfig {
    pub min_precision: f64,
    pub min_support: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { min_precision: DEFAULT_MIN_PRECISION, min_support: DEFAULT_MIN_SUPPORT }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOutcome {
    pub kept: Vec<Rule>,
    pub dropped: Vec<(Rule, RuleQuality)>,
}

/// Re-measures every rule on `validation`. Rules below the support floor or
/// the precision floor are dropped; kept rules take their measured precision
/// as reward, with the previous reward recorded in `validation`.
pub fn online_validate(
    rules: Vec<Rule>,
    validation: &[DialogueSample],
    cfg: &ValidationConfig,
) -> Result<ValidationOutcome, RulebaseError> {
    if validation.is_empty() {
        return Err(RulebaseError::EmptyValidation);
    }
    let prepared: Vec<PreparedSample> = validation.iter().map(PreparedSample::new).collect();
    let mut out = ValidationOutcome::default();
    for mut rule in rules {
        let q = measure_prepared(&rule, &prepared);
        match q.precision {
            Some(p) if q.coverage >= cfg.min_support && p >= cfg.min_precision => {
                rule.validation = Some(ValidationRecord {
                    agent_reward: rule.reward,
                    coverage: q.coverage,
                    correct: q.correct,
                });
                rule.reward = p;
                out.kept.push(rule);
            }
            _ => out.dropped.push((rule, q)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    pub min_reward: f64,
    pub validation: ValidationConfig,
    /// Keep at most this many rules per label, highest reward first.
    pub max_rules_per_label: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_reward: DEFAULT_MIN_REWARD,
            validation: ValidationConfig::default(),
            max_rules_per_label: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterReport {
    pub input: usize,
    pub below_reward: usize,
    pub duplicates: usize,
    pub dominated: usize,
    pub failed_validation: Vec<(Rule, RuleQuality)>,
    pub over_cap: usize,
}

/// Reward filter, duplicate collapse, dominance pruning and, when
/// `validation` is given, online validation followed by a second dominance
/// pass over the re-scored rules.
pub fn filter_pipeline(
    rules: Vec<Rule>,
    validation: Option<&[DialogueSample]>,
    cfg: &FilterConfig,
) -> Result<(Vec<Rule>, FilterReport), RulebaseError> {
    let mut report = FilterReport { input: rules.len(), ..Default::default() };
    let rules = filter_by_reward(rules, cfg.min_reward);
    report.below_reward = report.input - rules.len();
    let n = rules.len();
    let rules = collapse_duplicates(rules);
    report.duplicates = n - rules.len();
    let n = rules.len();
    let rules = remove_dominated(rules);
    report.dominated = n - rules.len();
    let mut rules = match validation {
        Some(v) => {
            let out = online_validate(rules, v, &cfg.validation)?;
            report.failed_validation = out.dropped;
            // measured precision replaces reward, which can create new dominance
            let n = out.kept.len();
            let kept = remove_dominated(out.kept);
            report.dominated += n - kept.len();
            kept
        }
        None => rules,
    };
    if let Some(cap) = cfg.max_rules_per_label {
        let n = rules.len();
        rules = cap_per_label(rules, cap);
        report.over_cap = n - rules.len();
    }
    Ok((rules, report))
}

fn cap_per_label(rules: Vec<Rule>, cap: usize) -> Vec<Rule> {
    let mut order: Vec<usize> = (0..rules.len()).collect();
    order.sort_by(|&a, &b| rules[b].reward.total_cmp(&rules[a].reward).then(a.cmp(&b)));
    let mut taken: HashMap<(Task, &str), usize> = HashMap::new();
    let mut keep = vec![false; rules.len()];
    for i in order {
        let n = taken.entry((rules[i].task, rules[i].label.as_str())).or_default();
        if *n < cap {
            *n += 1;
            keep[i] = true;
        }
    }
    rules.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect()
}

// ---- persistence ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    id: String,
    task: Task,
    label: String,
    predicates: Vec<String>,
    reward: f64,
    confidence: f64,
    source: RuleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleBaseFile {
    version: u64,
    metadata: Metadata,
    rules: Vec<RuleRecord>,
}

impl RuleBase {
    pub fn new(rules: Vec<Rule>, metadata: Metadata) -> Result<Self, RulebaseError> {
        let mut ids = HashSet::new();
        for r in &rules {
            if !ids.insert(r.id.as_str()) {
                return Err(RulebaseError::DuplicateId(r.id.clone()));
            }
        }
        Ok(RuleBase { rules, metadata })
    }

    /// Checks every rule's label against `taxonomy`.
    pub fn check_labels(&self, taxonomy: &LabelTaxonomy) -> Result<(), RulebaseError> {
        for (i, r) in self.rules.iter().enumerate() {
            r.check_label(taxonomy).map_err(|source| RulebaseError::Invariant {
                field: format!("rules[{i}].label"),
                source,
            })?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = RuleBaseFile {
            version: RULEBASE_VERSION,
            metadata: self.metadata.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleRecord {
                    id: r.id.clone(),
                    task: r.task,
                    label: r.label.clone(),
                    predicates: r.predicates().iter().map(ToString::to_string).collect(),
                    reward: r.reward,
                    confidence: r.confidence,
                    source: r.source,
                    validation: r.validation.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("rule bases always serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, RulebaseError> {
        let value: Value = serde_json::from_str(text).map_err(|e| RulebaseError::Schema {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        match value.get("version") {
            None => {
                return Err(RulebaseError::Schema { field: "version".into(), message: "missing".into() })
            }
            Some(v) if v.as_u64() != Some(RULEBASE_VERSION) => {
                return Err(RulebaseError::Version(v.to_string()))
            }
            Some(_) => {}
        }
        let file: RuleBaseFile = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            let field = match message.split('`').nth(1) {
                Some(name) if message.starts_with("missing") || message.starts_with("unknown field") => {
                    if path == "." {
                        name.to_string()
                    } else if path.ends_with(name) {
                        path
                    } else {
                        format!("{path}.{name}")
                    }
                }
                _ => path,
            };
            RulebaseError::Schema { field, message }
        })?;

        let mut rules = Vec::with_capacity(file.rules.len());
        for (i, rec) in file.rules.into_iter().enumerate() {
            let predicates = rec
                .predicates
                .iter()
                .enumerate()
                .map(|(j, text)| {
                    parse_predicate(text).map_err(|e| RulebaseError::Schema {
                        field: format!("rules[{i}].predicates[{j}]"),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut rule = Rule::new(rec.id, rec.task, rec.label, predicates, rec.reward, rec.confidence, rec.source)
                .map_err(|source| {
                    let field = match &source {
                        RuleError::OutOfRange { field, .. } => format!("rules[{i}].{field}"),
                        _ => format!("rules[{i}].predicates"),
                    };
                    RulebaseError::Invariant { field, source }
                })?;
            rule.validation = rec.validation;
            rules.push(rule);
        }
        RuleBase::new(rules, file.metadata)
    }
}

pub fn save_rulebase(rb: &RuleBase, path: impl AsRef<Path>) -> Result<(), RulebaseError> {
    let path = path.as_ref();
    fs::write(path, rb.to_json()).map_err(|source| RulebaseError::Io { path: path.to_path_buf(), source })
}

pub fn load_rulebase(path: impl AsRef<Path>) -> Result<RuleBase, RulebaseError> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| RulebaseError::Io { path: path.to_path_buf(), source })?;
    RuleBase::from_json(&text)
}
