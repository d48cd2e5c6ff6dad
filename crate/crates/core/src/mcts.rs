//! Monte Carlo tree search over conjunctive rules.
//!
//! Each node's state is a predicate set; a child adds one predicate proposed
//! by the agent. There are no rollouts: a freshly created child is assessed
//! once by the agent and `reward * confidence` is backpropagated. Selection
//! descends by UCT, ties going to the earlier-created child.
//!
//! A node's proposals are deduplicated against its own state and against the
//! actions of siblings created before it or before any of its ancestors, so
//! every predicate set appears at most once in the tree.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{propose_predicates, Agent, AgentContext, AgentError, ContextConfig, RewardEstimate};
use crate::dataset::{DatasetSplit, DialogueSample, LabelTaxonomy, Task};
use crate::predicate::{Predicate, Rule, RuleSource, MAX_PREDICATES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_iterations: usize,
    /// UCT exploration constant `c`.
    pub exploration: f64,
    /// Predicates requested per expansion.
    pub proposals: usize,
    pub seed: u64,
    pub context: ContextConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_iterations: 200,
            exploration: std::f64::consts::SQRT_2,
            proposals: 5,
            seed: 0,
            context: ContextConfig::default(),
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct SearchNode {
    /// Sorted predicate set.
    pub state: Vec<Predicate>,
    /// The predicate that produced this node from its parent.
    pub action: Option<Predicate>,
    pub parent: Option<NodeId>,
    pub visits: u64,
    pub total_value: f64,
    /// In creation order.
    pub children: Vec<NodeId>,
    pub untried: VecDeque<Predicate>,
    /// Whether proposals were requested for this node.
    pub fetched: bool,
    /// Fetched, nothing left to expand, and every child exhausted.
    pub exhausted: bool,
    pub evaluation: Option<RewardEstimate>,
}

impl SearchNode {
    fn new(state: Vec<Predicate>, action: Option<Predicate>, parent: Option<NodeId>) -> Self {
        SearchNode {
            state,
            action,
            parent,
            visits: 0,
            total_value: 0.0,
            children: Vec::new(),
            untried: VecDeque::new(),
            fetched: false,
            exhausted: false,
            evaluation: None,
        }
    }
}

/// Upper confidence bound for trees: `Q/N + c * sqrt(ln(parent) / N)`, or
/// `+inf` for an unvisited child.
pub fn uct_score(child: &SearchNode, parent_visits: u64, c: f64) -> f64 {
    if child.visits == 0 {
        return f64::INFINITY;
    }
    let n = child.visits as f64;
    child.total_value / n + c * ((parent_visits.max(1) as f64).ln() / n).sqrt()
}

#[derive(Debug, Clone, Default)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub const ROOT: NodeId = 0;

    fn new() -> Self {
        SearchTree { nodes: vec![SearchNode::new(Vec::new(), None, None)] }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn evaluations(&self) -> usize {
        self.nodes.iter().filter(|n| n.evaluation.is_some()).count()
    }

    fn best_child(&self, id: NodeId, c: f64) -> Option<NodeId> {
        let parent = &self.nodes[id];
        let mut best: Option<(NodeId, f64)> = None;
        for &child in &parent.children {
            if self.nodes[child].exhausted {
                continue;
            }
            let score = uct_score(&self.nodes[child], parent.visits, c);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((child, score));
            }
        }
        best.map(|(id, _)| id)
    }

    fn select(&self, c: f64) -> NodeId {
        let mut id = Self::ROOT;
        loop {
            let n = &self.nodes[id];
            if !n.fetched || !n.untried.is_empty() {
                return id;
            }
            match self.best_child(id, c) {
                Some(child) => id = child,
                None => return id,
            }
        }
    }

    /// Actions of the siblings created before `id` or before any of its
    /// ancestors.
    fn earlier_sibling_actions(&self, id: NodeId) -> Vec<Predicate> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            out.extend(
                self.nodes[parent]
                    .children
                    .iter()
                    .take_while(|&&c| c != cur)
                    .filter_map(|&c| self.nodes[c].action.clone()),
            );
            cur = parent;
        }
        out
    }

    fn add_child(&mut self, parent: NodeId, action: Predicate) -> NodeId {
        let mut state = self.nodes[parent].state.clone();
        state.push(action.clone());
        state.sort();
        let id = self.nodes.len();
        self.nodes.push(SearchNode::new(state, Some(action), Some(parent)));
        self.nodes[parent].children.push(id);
        id
    }

    fn backpropagate(&mut self, from: NodeId, value: f64) {
        let mut cur = Some(from);
        while let Some(id) = cur {
            let n = &mut self.nodes[id];
            n.visits += 1;
            n.total_value += value;
            cur = n.parent;
        }
    }

    fn refresh_exhausted(&mut self, from: NodeId) {
        let mut cur = Some(from);
        while let Some(id) = cur {
            let n = &self.nodes[id];
            let done = n.fetched
                && n.untried.is_empty()
                && n.children.iter().all(|&c| self.nodes[c].exhausted);
            if !done {
                break;
            }
            self.nodes[id].exhausted = true;
            cur = self.nodes[id].parent;
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no training sample carries label {0:?}")]
    NoExemplars(String),
    #[error("invalid search config: {0}")]
    Config(String),
}

#[derive(Debug)]
pub struct SearchOutcome {
    /// Every evaluated node as a rule, in creation order.
    pub rules: Vec<(Rule, RewardEstimate)>,
    pub tree: SearchTree,
    /// Iterations executed, including those that only discovered a dead end.
    pub iterations: usize,
    /// Set when the agent became unavailable and the search stopped early.
    pub aborted: Option<AgentError>,
}

/// Per-search slices of the split handed to the agent.
struct ContextPool<'a> {
    task: Task,
    label: &'a str,
    exemplars: Vec<&'a DialogueSample>,
    validation: Vec<&'a DialogueSample>,
}

impl<'a> ContextPool<'a> {
    fn new(label: &'a str, task: Task, split: &'a DatasetSplit, cfg: &SearchConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let has_label = |s: &&DialogueSample| s.gold_label.as_deref() == Some(label);

        let mut exemplars: Vec<_> = split.train.iter().filter(|s| s.task == task).filter(has_label).collect();
        exemplars.shuffle(&mut rng);
        exemplars.truncate(cfg.context.exemplars.max(1));

        // half target-label, half other-label validation samples when possible
        let same_task: Vec<_> = split.validation.iter().filter(|s| s.task == task).collect();
        let (mut pos, mut neg): (Vec<_>, Vec<_>) = same_task.into_iter().partition(has_label);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let want = cfg.context.validation;
        let take_pos = pos.len().min(want.div_ceil(2).max(want.saturating_sub(neg.len())));
        let take_neg = neg.len().min(want - take_pos.min(want));
        let mut validation: Vec<_> = pos[..take_pos].iter().chain(&neg[..take_neg]).copied().collect();
        validation.sort_by(|a, b| a.id.cmp(&b.id));

        ContextPool { task, label, exemplars, validation }
    }

    fn context(&self, current: Vec<Predicate>, siblings: Vec<Predicate>) -> AgentContext<'a> {
        AgentContext {
            task: self.task,
            label: self.label,
            exemplars: self.exemplars.clone(),
            validation: self.validation.clone(),
            current,
            siblings,
        }
    }
}

/// Receives one record per completed evaluation.
pub trait SearchObserver {
    fn on_evaluation(&mut self, iteration: usize, node: NodeId, state: &[Predicate], estimate: &RewardEstimate, best_reward: f64);
}

/// Writes one JSON line per evaluation.
pub struct JsonlTrace<W: Write> {
    out: W,
    label: String,
}

impl<W: Write> JsonlTrace<W> {
    pub fn new(out: W, label: impl Into<String>) -> Self {
        JsonlTrace { out, label: label.into() }
    }
}

impl<W: Write> SearchObserver for JsonlTrace<W> {
    fn on_evaluation(&mut self, iteration: usize, node: NodeId, state: &[Predicate], est: &RewardEstimate, best_reward: f64) {
        let record = json!({
            "label": self.label,
            "iteration": iteration,
            "node": node,
            "state": state.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "reward": est.reward,
            "confidence": est.confidence,
            "value": est.value(),
            "best_reward": best_reward,
        });
        if let Err(e) = writeln!(self.out, "{record}") {
            tracing::warn!(error = %e, "failed to write search trace");
        }
    }
}

pub fn run_search(
    label: &str,
    task: Task,
    split: &DatasetSplit,
    agent: &dyn Agent,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    run_search_observed(label, task, split, agent, cfg, None)
}

pub fn run_search_observed(
    label: &str,
    task: Task,
    split: &DatasetSplit,
    agent: &dyn Agent,
    cfg: &SearchConfig,
    mut observer: Option<&mut dyn SearchObserver>,
) -> Result<SearchOutcome, SearchError> {
    if cfg.max_iterations == 0 {
        return Err(SearchError::Config("max_iterations must be at least 1".into()));
    }
    if !(cfg.exploration > 0.0 && cfg.exploration.is_finite()) {
        return Err(SearchError::Config(format!("exploration constant {} must be positive", cfg.exploration)));
    }
    if cfg.proposals == 0 {
        return Err(SearchError::Config("proposals must be at least 1".into()));
    }
    let pool = ContextPool::new(label, task, split, cfg);
    if pool.exemplars.is_empty() {
        return Err(SearchError::NoExemplars(label.to_string()));
    }

    let mut tree = SearchTree::new();
    let mut harvested = Vec::new();
    let mut best_reward = f64::NEG_INFINITY;
    let mut aborted = None;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && !tree.root().exhausted {
        iterations += 1;
        let leaf = tree.select(cfg.exploration);

        if !tree.nodes[leaf].fetched {
            tree.nodes[leaf].fetched = true;
            if tree.nodes[leaf].state.len() < MAX_PREDICATES {
                let ctx = pool.context(tree.nodes[leaf].state.clone(), tree.earlier_sibling_actions(leaf));
                match propose_predicates(agent, &ctx, cfg.proposals) {
                    Ok(p) => tree.nodes[leaf].untried = p.predicates.into(),
                    Err(e) => {
                        tracing::error!(label, error = %e, "proposal failed; aborting search");
                        aborted = Some(e);
                        break;
                    }
                }
            }
        }

        let Some(action) = tree.nodes[leaf].untried.pop_front() else {
            tree.refresh_exhausted(leaf);
            continue;
        };
        let child = tree.add_child(leaf, action);
        let state = tree.nodes[child].state.clone();
        let rule = Rule::new(
            format!("mcts:{task}:{label}:{child}"),
            task,
            label,
            state.iter().cloned(),
            0.0,
            0.0,
            RuleSource::Mcts,
        )
        .expect("search states hold 1..=5 distinct predicates");
        let ctx = pool.context(state.clone(), Vec::new());
        let estimate = match agent.evaluate_rule(&ctx, &rule) {
            Ok(e) => e,
            Err(e) => {
                tracing::error!(label, error = %e, "evaluation failed; aborting search");
                aborted = Some(e);
                break;
            }
        };

        tree.backpropagate(child, estimate.value());
        best_reward = best_reward.max(estimate.reward);
        tracing::debug!(label, iteration = iterations, node = child, reward = estimate.reward, best_reward, "mcts evaluation");
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_evaluation(iterations, child, &state, &estimate, best_reward);
        }
        let mut rule = rule;
        rule.reward = estimate.reward;
        rule.confidence = estimate.confidence;
        tree.nodes[child].evaluation = Some(estimate.clone());
        harvested.push((rule, estimate));
        // the leaf may now be out of actions with all children exhausted
        tree.refresh_exhausted(leaf);
    }

    tracing::info!(label, iterations, rules = harvested.len(), "search finished");
    Ok(SearchOutcome { rules: harvested, tree, iterations, aborted })
}

/// One label's share of [`induce_all`].
#[derive(Debug)]
pub struct LabelRun {
    pub task: Task,
    pub label: String,
    pub iterations: usize,
    pub nodes: usize,
    pub rules: Vec<(Rule, RewardEstimate)>,
    pub aborted: Option<AgentError>,
    /// Line-delimited trace records, when requested.
    pub trace: Option<Vec<u8>>,
}

/// Runs one search per taxonomy label that has training exemplars, in
/// parallel across labels. Output follows taxonomy order.
pub fn induce_all(
    split: &DatasetSplit,
    taxonomy: &LabelTaxonomy,
    agent: &dyn Agent,
    cfg: &SearchConfig,
    trace: bool,
) -> Result<Vec<LabelRun>, SearchError> {
    use rayon::prelude::*;

    let targets: Vec<(Task, &str)> = Task::ALL
        .iter()
        .flat_map(|&t| taxonomy.labels(t).iter().map(move |l| (t, l.as_str())))
        .filter(|&(t, l)| {
            let found = split.train.iter().any(|s| s.task == t && s.gold_label.as_deref() == Some(l));
            if !found {
                tracing::warn!(label = l, "no training exemplars; skipping label");
            }
            found
        })
        .collect();

    targets
        .into_par_iter()
        .map(|(task, label)| {
            let mut sink = trace.then(|| JsonlTrace::new(Vec::new(), label));
            let observer = sink.as_mut().map(|t| t as &mut dyn SearchObserver);
            let out = run_search_observed(label, task, split, agent, cfg, observer)?;
            Ok(LabelRun {
                task,
                label: label.to_string(),
                iterations: out.iterations,
                nodes: out.tree.len(),
                rules: out.rules,
                aborted: out.aborted,
                trace: sink.map(|t| t.out),
            })
        })
        .collect()
}
