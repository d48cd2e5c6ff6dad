use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Agent, AgentContext, AgentError, RewardEstimate, Rephraser};
use crate::dataset::DialogueSample;
use crate::predicate::{measure_prepared, Field, Matcher, Op, PreparedSample, Predicate, Rule};
use crate::text::tokenize;

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Additive smoothing for the frequency ratio.
const SMOOTHING: f64 = 0.01;

/// Deterministic stand-in for a model-backed agent.
///
/// Proposals are `any_text contains "<token>"` predicates for the tokens
/// whose document frequency among target-label training samples most
/// exceeds their frequency among other labels, restricted to samples the
/// current rule already matches. Assessments are the rule's precision on
/// the context's validation samples plus seeded uniform noise in
/// `[-epsilon, epsilon]`; confidence is `min(1, coverage / 10)`.
pub struct MockAgent {
    corpus: Vec<(PreparedSample, Vec<String>)>,
    seed: u64,
    epsilon: f64,
}

impl MockAgent {
    pub fn new(corpus: &[DialogueSample], seed: u64) -> Self {
        let corpus = corpus
            .iter()
            .map(|s| {
                let prepared = PreparedSample::new(s);
                let mut tokens = tokenize(prepared.field(Field::AnyText));
                tokens.sort();
                tokens.dedup();
                (prepared, tokens)
            })
            .collect();
        MockAgent { corpus, seed, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon.max(0.0);
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn noise(&self, ctx: &AgentContext<'_>, rule: &Rule) -> f64 {
        if self.epsilon == 0.0 {
            return 0.0;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(ctx.task.as_str());
        h.update([0]);
        h.update(ctx.label);
        for p in rule.predicates() {
            h.update([0]);
            h.update(p.to_string());
        }
        let digest = h.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"));
        ChaCha8Rng::seed_from_u64(seed).random_range(-self.epsilon..=self.epsilon)
    }
}

impl Rephraser for MockAgent {
    fn rephrase(&self, text: &str) -> Result<String, AgentError> {
        Ok(text.to_string())
    }
}

impl Agent for MockAgent {
    fn propose_raw(&self, ctx: &AgentContext<'_>, k: usize) -> Result<Vec<String>, AgentError> {
        let matcher = Matcher::new(&ctx.current);
        let taken: HashSet<&str> = ctx
            .current
            .iter()
            .chain(&ctx.siblings)
            .filter(|p| p.field() == Field::AnyText && p.op() == Op::Contains)
            .map(Predicate::value)
            .collect();

        let (mut pos_n, mut neg_n) = (0usize, 0usize);
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for (sample, tokens) in &self.corpus {
            if sample.task != ctx.task || !matcher.matches(sample) {
                continue;
            }
            let positive = sample.gold_label.as_deref() == Some(ctx.label);
            if positive {
                pos_n += 1;
            } else {
                neg_n += 1;
            }
            for t in tokens {
                let c = counts.entry(t.as_str()).or_default();
                if positive {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
        if pos_n == 0 {
            return Ok(Vec::new());
        }

        let mut ranked: Vec<(f64, usize, &str)> = counts
            .into_iter()
            .filter(|(t, (pos, _))| *pos > 0 && !taken.contains(t))
            .filter_map(|(t, (pos, neg))| {
                let pos_rate = pos as f64 / pos_n as f64;
                let neg_rate = if neg_n == 0 { 0.0 } else { neg as f64 / neg_n as f64 };
                (pos_rate > neg_rate)
                    .then(|| ((pos_rate + SMOOTHING) / (neg_rate + SMOOTHING), pos, t))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));

        Ok(ranked
            .into_iter()
            .filter_map(|(_, _, t)| Predicate::new(Field::AnyText, Op::Contains, t).ok())
            .take(k)
            .map(|p| p.to_string())
            .collect())
    }

    fn evaluate_rule(&self, ctx: &AgentContext<'_>, rule: &Rule) -> Result<RewardEstimate, AgentError> {
        let prepared: Vec<PreparedSample> = ctx
            .validation
            .iter()
            .filter(|s| s.task == rule.task)
            .map(|s| PreparedSample::new(s))
            .collect();
        let q = measure_prepared(rule, &prepared);
        let confidence = (q.coverage as f64 / 10.0).min(1.0);
        let reward = match q.precision {
            None => 0.0,
            Some(p) => (p + self.noise(ctx, rule)).clamp(0.0, 1.0),
        };
        RewardEstimate::new(
            reward,
            confidence,
            format!("{} of {} matched validation samples carry the label", q.correct, q.coverage),
        )
    }
}
