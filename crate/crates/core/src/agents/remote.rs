use std::fmt::Write as _;

use serde_json::Value;

use super::{Agent, AgentContext, AgentError, RewardEstimate, Rephraser};
use crate::dataset::{DialogueSample, Speaker};
use crate::predicate::Rule;
use crate::transport::{ChatMessage, ChatTransport};

/// Attempts per request; failed parses are echoed back before retrying.
pub const ATTEMPTS: usize = 3;

const PROPOSER_SYSTEM: &str = "\
You write keyword rules that classify e-commerce customer-service records.
A record has user turns, customer-service turns and OCR text from a screenshot.
A predicate has the form: <field> <op> \"<value>\"
  field: user_text | service_text | ocr_text | any_text
  op:    contains | not_contains | starts_with | ends_with
Inside the value, escape \" and \\ with a backslash. Values are matched
case-insensitively as plain substrings; no regular expressions.";

const EVALUATOR_SYSTEM: &str = "\
You judge keyword rules that classify e-commerce customer-service records.
A rule is a conjunction of predicates; it fires when every predicate holds.
Estimate the rule's accuracy on the labeled validation records you are shown:
among the records the rule fires on, the fraction that carry the rule's label.";

const REPHRASER_SYSTEM: &str = "\
Rewrite the customer-service message you are given so that it keeps the same
meaning and intent but uses different wording. Reply with the rewritten text only.";

/// An agent backed by a chat-completions endpoint.
///
/// Proposal and evaluation replies must contain exactly one fenced block
/// holding a JSON object: `{"predicates": [...]}` for proposals and
/// `{"reward", "confidence", "rationale"}` for evaluations.
pub struct RemoteAgent<T> {
    transport: T,
    attempts: usize,
}

impl<T: ChatTransport> RemoteAgent<T> {
    pub fn new(transport: T) -> Self {
        RemoteAgent { transport, attempts: ATTEMPTS }
    }

    fn converse<R>(
        &self,
        mut messages: Vec<ChatMessage>,
        temperature: f64,
        parse: impl Fn(&str) -> Result<R, AgentError>,
    ) -> Result<R, AgentError> {
        let mut last = None;
        for attempt in 1..=self.attempts {
            match self.transport.complete(&messages, temperature) {
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "agent transport failure");
                    last = Some(e.into());
                }
                Ok(reply) => match parse(&reply) {
                    Ok(v) => return Ok(v),
                    Err(e) => {
                        tracing::warn!(attempt, error = %e, "agent reply rejected");
                        messages.push(ChatMessage::assistant(reply));
                        messages.push(ChatMessage::user(format!(
                            "Your reply was rejected: {e}. Answer again, following the required format exactly."
                        )));
                        last = Some(e);
                    }
                },
            }
        }
        Err(AgentError::Unavailable {
            attempts: self.attempts,
            cause: Box::new(last.unwrap_or(AgentError::Transport("no attempts made".into()))),
        })
    }
}

fn render_sample(out: &mut String, s: &DialogueSample, with_label: bool) {
    let _ = write!(out, "- record {} ({})", s.id, s.task);
    if with_label {
        let _ = write!(out, ", label: {}", s.gold_label.as_deref().unwrap_or("?"));
    }
    out.push('\n');
    for t in &s.turns {
        let who = match t.speaker {
            Speaker::User => "user",
            Speaker::ServiceRep => "service",
        };
        let _ = writeln!(out, "    {who}: {}", t.text);
    }
    if !s.ocr_text.is_empty() {
        let _ = writeln!(out, "    ocr: {}", s.ocr_text);
    }
}

fn proposal_prompt(ctx: &AgentContext<'_>, k: usize) -> String {
    let mut out = format!("Target label: {} (task {})\n\nRecords with this label:\n", ctx.label, ctx.task);
    for s in &ctx.exemplars {
        render_sample(&mut out, s, false);
    }
    out.push_str("\nCurrent rule predicates:\n");
    if ctx.current.is_empty() {
        out.push_str("(none)\n");
    }
    for p in &ctx.current {
        let _ = writeln!(out, "- {p}");
    }
    if !ctx.siblings.is_empty() {
        out.push_str("\nAlready tried at this step, do not repeat:\n");
        for p in &ctx.siblings {
            let _ = writeln!(out, "- {p}");
        }
    }
    let _ = write!(
        out,
        "\nPropose up to {k} new predicates that, added to the current rule, best single out \
         records labeled {}.\nReply with one fenced block:\n```json\n{{\"predicates\": [\"any_text contains \\\"...\\\"\"]}}\n```",
        ctx.label
    );
    out
}

fn evaluation_prompt(ctx: &AgentContext<'_>, rule: &Rule) -> String {
    let mut out = format!("Rule for label {} (task {}):\n", rule.label, rule.task);
    for p in rule.predicates() {
        let _ = writeln!(out, "- {p}");
    }
    out.push_str("\nValidation records:\n");
    for s in &ctx.validation {
        render_sample(&mut out, s, true);
    }
    out.push_str(
        "\nGive the rule's accuracy on these records as `reward` and how sure you are as \
         `confidence`, both between 0 and 1.\nReply with one fenced block:\n\
         ```json\n{\"reward\": 0.0, \"confidence\": 0.0, \"rationale\": \"...\"}\n```",
    );
    out
}

fn protocol(field: &str, message: impl Into<String>) -> AgentError {
    AgentError::Protocol { field: field.into(), message: message.into() }
}

/// Returns the body of the single fenced block in `reply`, without the
/// info string.
pub fn extract_fenced_block(reply: &str) -> Result<&str, AgentError> {
    let parts: Vec<&str> = reply.split("```").collect();
    let blocks = parts.len().saturating_sub(1) / 2;
    if blocks == 0 {
        return Err(protocol("reply", "no fenced block found"));
    }
    if blocks > 1 {
        return Err(protocol("reply", format!("expected a single fenced block, found {blocks}")));
    }
    let body = parts[1];
    let body = match body.split_once('\n') {
        Some((info, rest)) if info.trim().chars().all(|c| c.is_ascii_alphanumeric()) => rest,
        _ => body,
    };
    Ok(body.trim())
}

fn fenced_object(reply: &str) -> Result<serde_json::Map<String, Value>, AgentError> {
    let body = extract_fenced_block(reply)?;
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(protocol("reply", "fenced block is not a JSON object")),
        Err(e) => Err(protocol("reply", format!("fenced block is not valid JSON: {e}"))),
    }
}

pub fn parse_proposal_reply(reply: &str) -> Result<Vec<String>, AgentError> {
    let obj = fenced_object(reply)?;
    let items = obj
        .get("predicates")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("predicates", "missing or not an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| protocol(&format!("predicates[{i}]"), "not a string"))
        })
        .collect()
}

pub fn parse_evaluation_reply(reply: &str) -> Result<RewardEstimate, AgentError> {
    let obj = fenced_object(reply)?;
    let number = |field: &str| {
        obj.get(field)
            .and_then(Value::as_f64)
            .ok_or_else(|| protocol(field, "missing or not a number"))
    };
    let reward = number("reward")?;
    let confidence = number("confidence")?;
    let rationale = obj
        .get("rationale")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("rationale", "missing or not a string"))?;
    RewardEstimate::new(reward, confidence, rationale)
}

fn parse_rephrase_reply(reply: &str) -> Result<String, AgentError> {
    let text = reply.trim();
    if text.is_empty() {
        return Err(protocol("text", "empty rephrase"));
    }
    Ok(text.to_string())
}

impl<T: ChatTransport> Rephraser for RemoteAgent<T> {
    fn rephrase(&self, text: &str) -> Result<String, AgentError> {
        let messages = vec![ChatMessage::system(REPHRASER_SYSTEM), ChatMessage::user(text)];
        self.converse(messages, 0.7, parse_rephrase_reply)
    }
}

impl<T: ChatTransport> Agent for RemoteAgent<T> {
    fn propose_raw(&self, ctx: &AgentContext<'_>, k: usize) -> Result<Vec<String>, AgentError> {
        let messages = vec![
            ChatMessage::system(PROPOSER_SYSTEM),
            ChatMessage::user(proposal_prompt(ctx, k)),
        ];
        self.converse(messages, 0.7, parse_proposal_reply)
    }

    fn evaluate_rule(&self, ctx: &AgentContext<'_>, rule: &Rule) -> Result<RewardEstimate, AgentError> {
        let messages = vec![
            ChatMessage::system(EVALUATOR_SYSTEM),
            ChatMessage::user(evaluation_prompt(ctx, rule)),
        ];
        self.converse(messages, 0.0, parse_evaluation_reply)
    }
}
