//! The predicate DSL and conjunctive rule semantics.
//!
//! A predicate is written `<field> <op> "<value>"`, e.g.
//! `ocr_text contains "物流"`. Inside the quoted value, `"` and `\` are
//! escaped with a backslash; no other escapes exist. Tokens are separated by
//! ASCII whitespace and surrounding whitespace is ignored.
//!
//! Matching runs on NFKC-normalized, simple-case-folded text on both sides.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DialogueSample, LabelTaxonomy, Speaker, Task};
use crate::text::normalize;

/// Largest number of predicates in a rule.
pub const MAX_PREDICATES: usize = 5;
/// Largest predicate value, in Unicode scalar values.
pub const MAX_VALUE_CHARS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    UserText,
    ServiceText,
    OcrText,
    AnyText,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::UserText, Field::ServiceText, Field::OcrText, Field::AnyText];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::UserText => "user_text",
            Field::ServiceText => "service_text",
            Field::OcrText => "ocr_text",
            Field::AnyText => "any_text",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Contains,
    NotContains,
    StartsWith,
    EndsWith,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Contains, Op::NotContains, Op::StartsWith, Op::EndsWith];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Contains => "contains",
            Op::NotContains => "not_contains",
            Op::StartsWith => "starts_with",
            Op::EndsWith => "ends_with",
        }
    }

    fn apply(self, haystack: &str, needle: &str) -> bool {
        match self {
            Op::Contains => haystack.contains(needle),
            Op::NotContains => !haystack.contains(needle),
            Op::StartsWith => haystack.starts_with(needle),
            Op::EndsWith => haystack.ends_with(needle),
        }
    }
}

/// One atomic text condition over a sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    field: Field,
    op: Op,
    value: String,
}

impl Predicate {
    pub fn new(field: Field, op: Op, value: impl Into<String>) -> Result<Self, ParseError> {
        let value = value.into();
        check_value(&value, 0)?;
        Ok(Predicate { field, op, value })
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn op(&self) -> Op {
        self.op
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    /// Canonical text form, identical to `Display`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} \"", self.field.as_str(), self.op.as_str())?;
        for c in self.value.chars() {
            if c == '"' || c == '\\' {
                f.write_str("\\")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("\"")
    }
}

impl FromStr for Predicate {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_predicate(s)
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_predicate(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected {expected}, found {found}")]
    Expected { expected: &'static str, found: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("empty value")]
    EmptyValue,
    #[error("value has {0} characters, more than the limit of {MAX_VALUE_CHARS}")]
    ValueTooLong(usize),
    #[error("invalid escape `\\{0}`")]
    BadEscape(char),
}

/// A parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn check_value(value: &str, offset: usize) -> Result<(), ParseError> {
    let n = value.chars().count();
    let kind = if n == 0 {
        ParseErrorKind::EmptyValue
    } else if n > MAX_VALUE_CHARS {
        ParseErrorKind::ValueTooLong(n)
    } else {
        return Ok(());
    };
    Err(ParseError { offset, kind })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) -> usize {
        let rest = self.rest();
        let n = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_whitespace()).len();
        self.pos += n;
        n
    }

    fn found(&self) -> String {
        match self.rest().chars().next() {
            None => "end of input".into(),
            Some(c) => format!("{c:?}"),
        }
    }

    fn expected(&self, expected: &'static str) -> ParseError {
        ParseError { offset: self.pos, kind: ParseErrorKind::Expected { expected, found: self.found() } }
    }

    fn ident(&mut self, expected: &'static str) -> Result<(usize, &'a str), ParseError> {
        let rest = self.rest();
        let len = rest.len()
            - rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric() || c == '_').len();
        if len == 0 {
            return Err(self.expected(expected));
        }
        let start = self.pos;
        self.pos += len;
        Ok((start, &rest[..len]))
    }

    fn separator(&mut self, expected: &'static str) -> Result<(), ParseError> {
        if self.skip_ws() == 0 {
            return Err(self.expected(expected));
        }
        Ok(())
    }

    fn quoted(&mut self) -> Result<(usize, String), ParseError> {
        if !self.rest().starts_with('"') {
            return Err(self.expected("'\"'"));
        }
        let open = self.pos;
        self.pos += 1;
        let mut value = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok((open, value));
                }
                '\\' => match chars.next() {
                    Some((_, e @ ('"' | '\\'))) => value.push(e),
                    Some((_, e)) => {
                        return Err(ParseError {
                            offset: self.pos + i,
                            kind: ParseErrorKind::BadEscape(e),
                        })
                    }
                    None => break,
                },
                c => value.push(c),
            }
        }
        self.pos = self.src.len();
        Err(self.expected("closing '\"'"))
    }
}

/// Parses the canonical text form of a predicate.
pub fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let mut cur = Cursor { src: text, pos: 0 };
    cur.skip_ws();

    let (at, name) = cur.ident("field name")?;
    let field = Field::ALL
        .into_iter()
        .find(|f| f.as_str() == name)
        .ok_or_else(|| ParseError { offset: at, kind: ParseErrorKind::UnknownField(name.into()) })?;
    cur.separator("whitespace after field")?;

    let (at, name) = cur.ident("operator")?;
    let op = Op::ALL
        .into_iter()
        .find(|o| o.as_str() == name)
        .ok_or_else(|| ParseError { offset: at, kind: ParseErrorKind::UnknownOp(name.into()) })?;
    cur.separator("whitespace after operator")?;

    let (at, value) = cur.quoted()?;
    check_value(&value, at)?;

    cur.skip_ws();
    if cur.pos != text.len() {
        return Err(cur.expected("end of input"));
    }
    Ok(Predicate { field, op, value })
}

fn joined_turns(sample: &DialogueSample, speaker: Speaker) -> String {
    let texts: Vec<&str> = sample
        .turns
        .iter()
        .filter(|t| t.speaker == speaker)
        .map(|t| t.text.as_str())
        .collect();
    texts.join("\n")
}

/// Raw (un-normalized) text of `field` for `sample`.
pub fn extract_field(field: Field, sample: &DialogueSample) -> String {
    match field {
        Field::UserText => joined_turns(sample, Speaker::User),
        Field::ServiceText => joined_turns(sample, Speaker::ServiceRep),
        Field::OcrText => sample.ocr_text.clone(),
        Field::AnyText => format!(
            "{}\n{}\n{}",
            joined_turns(sample, Speaker::User),
            joined_turns(sample, Speaker::ServiceRep),
            sample.ocr_text
        ),
    }
}

pub fn eval_predicate(p: &Predicate, sample: &DialogueSample) -> bool {
    let haystack = normalize(&extract_field(p.field, sample));
    p.op.apply(&haystack, &normalize(&p.value))
}

/// A sample with every field extracted and normalized once, for repeated
/// matching.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub task: Task,
    pub gold_label: Option<String>,
    fields: [String; 4],
}

impl PreparedSample {
    pub fn new(sample: &DialogueSample) -> Self {
        PreparedSample {
            task: sample.task,
            gold_label: sample.gold_label.clone(),
            fields: Field::ALL.map(|f| normalize(&extract_field(f, sample))),
        }
    }

    pub fn field(&self, field: Field) -> &str {
        &self.fields[field.index()]
    }
}

/// Predicates with their needles normalized once.
#[derive(Debug, Clone)]
pub struct Matcher {
    terms: Vec<(Field, Op, String)>,
}

impl Matcher {
    pub fn new<'a>(predicates: impl IntoIterator<Item = &'a Predicate>) -> Self {
        Matcher {
            terms: predicates
                .into_iter()
                .map(|p| (p.field, p.op, normalize(&p.value)))
                .collect(),
        }
    }

    pub fn matches(&self, sample: &PreparedSample) -> bool {
        self.terms.iter().all(|(field, op, needle)| op.apply(sample.field(*field), needle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    Mcts,
    Manual,
}

/// Outcome of re-measuring a rule on held-out data. Recorded on rules kept by
/// online validation; `agent_reward` is the reward the rule had before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationRecord {
    pub agent_reward: f64,
    pub coverage: usize,
    pub correct: usize,
}

/// A conjunction of 1..=5 predicates implying `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub id: String,
    pub task: Task,
    pub label: String,
    predicates: BTreeSet<Predicate>,
    pub reward: f64,
    pub confidence: f64,
    pub source: RuleSource,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule has {0} predicates; allowed range is 1..={MAX_PREDICATES}")]
    Size(usize),
    #[error("duplicate predicate `{0}`")]
    DuplicatePredicate(String),
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("label {label:?} is not in the {task} taxonomy")]
    UnknownLabel { label: String, task: Task },
}

fn check_ratio(field: &'static str, value: f64) -> Result<(), RuleError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RuleError::OutOfRange { field, value })
    }
}

impl Rule {
    pub fn new(
        id: impl Into<String>,
        task: Task,
        label: impl Into<String>,
        predicates: impl IntoIterator<Item = Predicate>,
        reward: f64,
        confidence: f64,
        source: RuleSource,
    ) -> Result<Self, RuleError> {
        let mut set = BTreeSet::new();
        for p in predicates {
            if set.contains(&p) {
                return Err(RuleError::DuplicatePredicate(p.to_string()));
            }
            set.insert(p);
        }
        if set.is_empty() || set.len() > MAX_PREDICATES {
            return Err(RuleError::Size(set.len()));
        }
        check_ratio("reward", reward)?;
        check_ratio("confidence", confidence)?;
        Ok(Rule {
            id: id.into(),
            task,
            label: label.into(),
            predicates: set,
            reward,
            confidence,
            source,
            validation: None,
        })
    }

    pub fn predicates(&self) -> &BTreeSet<Predicate> {
        &self.predicates
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn check_label(&self, taxonomy: &LabelTaxonomy) -> Result<(), RuleError> {
        if taxonomy.contains(self.task, &self.label) {
            Ok(())
        } else {
            Err(RuleError::UnknownLabel { label: self.label.clone(), task: self.task })
        }
    }

    pub fn matcher(&self) -> Matcher {
        Matcher::new(&self.predicates)
    }
}

/// True iff every predicate of `rule` holds on `sample`. Task agreement is
/// the caller's concern.
pub fn eval_rule(rule: &Rule, sample: &DialogueSample) -> bool {
    rule.predicates.iter().all(|p| eval_predicate(p, sample))
}

/// Ground-truth quality of a rule on labeled samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleQuality {
    pub coverage: usize,
    pub correct: usize,
    /// `None` when the rule matched nothing.
    pub precision: Option<f64>,
}

impl RuleQuality {
    fn from_counts(coverage: usize, correct: usize) -> Self {
        let precision = (coverage > 0).then(|| correct as f64 / coverage as f64);
        RuleQuality { coverage, correct, precision }
    }
}

/// Coverage and precision of `rule` over the same-task samples of
/// `validation`.
pub fn measure_rule(rule: &Rule, validation: &[DialogueSample]) -> RuleQuality {
    let prepared: Vec<PreparedSample> = validation
        .iter()
        .filter(|s| s.task == rule.task)
        .map(PreparedSample::new)
        .collect();
    measure_prepared(rule, &prepared)
}

/// [`measure_rule`] over pre-normalized samples.
pub fn measure_prepared<'a>(
    rule: &Rule,
    samples: impl IntoIterator<Item = &'a PreparedSample>,
) -> RuleQuality {
    let matcher = rule.matcher();
    let (mut coverage, mut correct) = (0, 0);
    for s in samples.into_iter().filter(|s| s.task == rule.task) {
        if matcher.matches(s) {
            coverage += 1;
            if s.gold_label.as_deref() == Some(rule.label.as_str()) {
                correct += 1;
            }
        }
    }
    RuleQuality::from_counts(coverage, correct)
}
