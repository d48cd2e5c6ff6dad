//! Agent boundary for rule induction: predicate proposal, rule
//! self-assessment, and text rephrasing.
//!
//! Two implementations ship: [`MockAgent`], a deterministic corpus-mining
//! stand-in, and [`RemoteAgent`], which drives a chat-completions endpoint
//! and validates its structured replies.

mod mock;
mod remote;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DialogueSample, Task};
use crate::predicate::{parse_predicate, ParseError, Predicate, Rule};

pub use mock::{MockAgent, DEFAULT_EPSILON};
pub use remote::{
    extract_fenced_block, parse_evaluation_reply, parse_proposal_reply, RemoteAgent, ATTEMPTS,
};

/// An agent's self-assessment of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub reward: f64,
    pub confidence: f64,
    pub rationale: String,
}

impl RewardEstimate {
    /// Rejects non-finite or out-of-range values rather than clamping them.
    pub fn new(reward: f64, confidence: f64, rationale: impl Into<String>) -> Result<Self, AgentError> {
        for (field, v) in [("reward", reward), ("confidence", confidence)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AgentError::Protocol {
                    field: field.into(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        }
        Ok(RewardEstimate { reward, confidence, rationale: rationale.into() })
    }

    /// Value backpropagated through the search tree.
    pub fn value(&self) -> f64 {
        self.reward * self.confidence
    }
}

/// What an agent sees when proposing for or assessing a rule.
#[derive(Debug, Clone)]
pub struct AgentContext<'a> {
    pub task: Task,
    pub label: &'a str,
    /// Training samples carrying `label`.
    pub exemplars: Vec<&'a DialogueSample>,
    /// Labeled held-out samples the rule is judged against.
    pub validation: Vec<&'a DialogueSample>,
    /// Predicates already in the rule being grown.
    pub current: Vec<Predicate>,
    /// Predicates already tried as alternatives at this point of the search.
    pub siblings: Vec<Predicate>,
}

/// How many samples of each kind go into an agent context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub exemplars: usize,
    pub validation: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { exemplars: 8, validation: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid reply field `{field}`: {message}")]
    Protocol { field: String, message: String },
    #[error("agent unavailable after {attempts} attempts: {cause}")]
    Unavailable { attempts: usize, cause: Box<AgentError> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl AgentError {
    /// The innermost error, looking through `Unavailable`.
    pub fn root_cause(&self) -> &AgentError {
        match self {
            AgentError::Unavailable { cause, .. } => cause.root_cause(),
            other => other,
        }
    }
}

impl From<crate::transport::TransportError> for AgentError {
    fn from(e: crate::transport::TransportError) -> Self {
        AgentError::Transport(e.0)
    }
}

pub trait Rephraser: Send + Sync {
    fn rephrase(&self, text: &str) -> Result<String, AgentError>;
}

/// Proposer and evaluator roles. Implementors return raw predicate text;
/// [`propose_predicates`] owns parsing and deduplication.
pub trait Agent: Rephraser {
    fn propose_raw(&self, ctx: &AgentContext<'_>, k: usize) -> Result<Vec<String>, AgentError>;

    fn evaluate_rule(&self, ctx: &AgentContext<'_>, rule: &Rule) -> Result<RewardEstimate, AgentError>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Proposals {
    pub predicates: Vec<Predicate>,
    /// Proposals that failed to parse, with the reason.
    pub rejected: Vec<(String, ParseError)>,
}

/// Asks `agent` for up to `k` new predicates. Unparseable proposals are
/// dropped and reported; duplicates of `ctx.current`, `ctx.siblings`, or
/// earlier proposals are removed.
pub fn propose_predicates(
    agent: &dyn Agent,
    ctx: &AgentContext<'_>,
    k: usize,
) -> Result<Proposals, AgentError> {
    if k == 0 {
        return Err(AgentError::InvalidRequest("k must be at least 1".into()));
    }
    let raw = agent.propose_raw(ctx, k)?;
    let mut seen: HashSet<Predicate> = ctx.current.iter().chain(&ctx.siblings).cloned().collect();
    let mut out = Proposals::default();
    for text in raw {
        match parse_predicate(&text) {
            Ok(p) => {
                if out.predicates.len() < k && seen.insert(p.clone()) {
                    out.predicates.push(p);
                }
            }
            Err(e) => {
                tracing::debug!(proposal = %text, error = %e, "dropping unparseable proposal");
                out.rejected.push((text, e));
            }
        }
    }
    Ok(out)
}
