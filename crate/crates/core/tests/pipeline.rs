use rulesmith_core::dataset::{generate_validation, stratified_split, RephraseConfig};
use rulesmith_core::inference::{predictions_from_jsonl, predictions_to_jsonl};
use rulesmith_core::mcts::induce_all;
use rulesmith_core::predicate::{measure_rule, MAX_PREDICATES};
use rulesmith_core::rulebase::Metadata;
use rulesmith_core::synth::{synthesize, SynthConfig};
use rulesmith_core::*;

fn mock_rulebase(seed: u64) -> (RuleBase, rulesmith_core::synth::SyntheticCorpus, DatasetSplit) {
    let corpus = synthesize(&SynthConfig { samples: 240, seed, ..SynthConfig::default() }).unwrap();
    let split = stratified_split(&corpus.samples, 0.3, seed).unwrap();
    let agent = MockAgent::new(&split.train, seed).with_epsilon(0.0);
    let cfg = SearchConfig { max_iterations: 40, seed, ..SearchConfig::default() };
    let runs = induce_all(&split, &corpus.taxonomy, &agent, &cfg, false).unwrap();
    let rules: Vec<Rule> = runs.into_iter().flat_map(|r| r.rules).map(|(r, _)| r).collect();
    let (kept, _) = filter_pipeline(rules, Some(&split.validation), &FilterConfig::default()).unwrap();
    (RuleBase::new(kept, Metadata::default()).unwrap(), corpus, split)
}

#[test]
fn induce_filter_save_predict_evaluate() {
    let (rb, corpus, split) = mock_rulebase(3);
    assert!(!rb.rules.is_empty());
    for r in &rb.rules {
        assert!(r.len() <= MAX_PREDICATES);
        assert!(r.reward >= 0.8);
        let record = r.validation.as_ref().unwrap();
        assert!(record.coverage >= 2);
    }
    // one rule per label is enough to carry the planted token
    for (label, token) in &corpus.planted {
        assert!(
            rb.rules.iter().any(|r| &r.label == label && r.predicates().iter().any(|p| p.value() == token)),
            "{label} lacks its planted rule"
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rules.json");
    save_rulebase(&rb, &path).unwrap();
    let back = load_rulebase(&path).unwrap();
    assert_eq!(back, rb);
    back.check_labels(&corpus.taxonomy).unwrap();

    let stub = StubPredictor::new(0.7, 1, corpus.taxonomy.clone());
    let (base, _) = predict_batch(&RuleBase::default(), &stub, &split.validation, &BatchConfig::default()).unwrap();
    let (joint, report) = predict_batch(&back, &stub, &split.validation, &BatchConfig::default()).unwrap();
    assert!(report.rule_overrides > 0);
    assert_eq!(predictions_from_jsonl(&predictions_to_jsonl(&joint)).unwrap(), joint);

    let before = evaluate(&base, &split.validation, &corpus.taxonomy).unwrap();
    let after = evaluate(&joint, &split.validation, &corpus.taxonomy).unwrap();
    assert!(after.oss > before.oss, "{} <= {}", after.oss, before.oss);
}

#[test]
fn induction_is_reproducible() {
    let (a, _, _) = mock_rulebase(11);
    let (b, _, _) = mock_rulebase(11);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn validated_rules_agree_with_oracle() {
    let (rb, _, split) = mock_rulebase(5);
    for r in &rb.rules {
        let q = measure_rule(r, &split.validation);
        assert_eq!(q.precision, Some(r.reward));
        assert_eq!(r.validation.as_ref().map(|v| (v.coverage, v.correct)), Some((q.coverage, q.correct)));
    }
}

#[test]
fn echo_rephrase_builds_labeled_validation() {
    let corpus = synthesize(&SynthConfig { samples: 40, ..SynthConfig::default() }).unwrap();
    let agent = MockAgent::new(&corpus.samples, 0);
    let cfg = RephraseConfig { per_sample: 2, ..RephraseConfig::default() };
    let out = generate_validation(&corpus.samples, &agent, &cfg).unwrap();
    assert_eq!(out.samples.len(), 80);
    assert!(out.skipped.is_empty());
    assert!(out.samples.windows(2).all(|w| w[0].id < w[1].id));
    assert!(out.samples.iter().all(|s| s.gold_label.is_some()));
}
