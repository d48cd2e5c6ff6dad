//! Fixtures shared by the rulesmith benchmarks.

use rulesmith_core::dataset::stratified_split;
use rulesmith_core::synth::{synthesize, SynthConfig, SyntheticCorpus};
use rulesmith_core::{parse_predicate, DatasetSplit, Predicate, Rule, RuleSource, Task};

pub fn corpus(samples: usize, seed: u64) -> SyntheticCorpus {
    synthesize(&SynthConfig { samples, plant_rate: 0.6, seed, ..SynthConfig::default() })
        .expect("benchmark corpus config is valid")
}

pub fn split(corpus: &SyntheticCorpus, seed: u64) -> DatasetSplit {
    stratified_split(&corpus.samples, 0.3, seed).expect("every synthetic label has several samples")
}

/// `n` rules over a small predicate pool, so subset pairs are common.
pub fn rule_population(n: usize) -> Vec<Rule> {
    let pool: Vec<Predicate> = ["退货", "物流", "发票", "尺码", "cue0", "cue1", "f001", "f002"]
        .iter()
        .map(|t| parse_predicate(&format!("any_text contains \"{t}\"")).expect("valid predicate"))
        .collect();
    (0..n)
        .map(|i| {
            let size = 1 + i % 4;
            let preds: Vec<Predicate> = (0..size).map(|j| pool[(i * 7 + j * 3) % pool.len()].clone()).collect();
            let reward = 0.8 + 0.05 * ((i * 13) % 5) as f64;
            let label = if i % 2 == 0 { "intent_0" } else { "intent_1" };
            Rule::new(format!("r{i}"), Task::Intent, label, preds, reward, 1.0, RuleSource::Mcts)
                .expect("pool predicates are distinct")
        })
        .collect()
}
