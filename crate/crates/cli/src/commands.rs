use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use rulesmith_core::agents::Agent;
use rulesmith_core::dataset::{generate_validation, stratified_split, RephraseConfig};
use rulesmith_core::inference::{predictions_from_jsonl, predictions_to_jsonl, RemotePredictor};
use rulesmith_core::mcts::induce_all;
use rulesmith_core::metrics::EvalReport;
use rulesmith_core::rulebase::{digest, FilterReport, Metadata, ValidationConfig};
use rulesmith_core::synth::{synthesize, SynthConfig};
use rulesmith_core::{
    evaluate, filter_pipeline, load_dataset, load_rulebase, predict_batch, save_rulebase, write_dataset,
    BatchConfig, DatasetError, DatasetSplit, DialogueSample, FilterConfig, HttpConfig, HttpTransport,
    LabelTaxonomy, MetricError, MockAgent, Predictor, RemoteAgent, Rule, RuleBase, SearchConfig, StubPredictor,
    Task,
};

use crate::{AgentArgs, EvalArgs, FilterArgs, FilterFlags, InduceArgs, PredictArgs, RephraseArgs, ReportArgs, SynthArgs};

const AGENT_KEY_VAR: &str = "RULESMITH_AGENT_KEY";
const PREDICTOR_KEY_VAR: &str = "RULESMITH_PREDICTOR_KEY";
/// Validation fraction used by `induce` when no --val is given.
const HOLDOUT: f64 = 0.2;

/// Short machine-readable category for the structured error line.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<DatasetError>() {
            return "dataset";
        }
        if cause.is::<rulesmith_core::rulebase::RulebaseError>() {
            return "rulebase";
        }
        if cause.is::<rulesmith_core::AgentError>() || cause.is::<rulesmith_core::mcts::SearchError>() {
            return "agent";
        }
        if cause.is::<rulesmith_core::inference::InferenceError>() {
            return "predictor";
        }
        if cause.is::<MetricError>() {
            return "metric";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "usage"
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn print_summary(value: Value) {
    println!("{value}");
}

fn load_taxonomy(path: &Path) -> Result<LabelTaxonomy> {
    LabelTaxonomy::load(path).with_context(|| format!("cannot load taxonomy {}", path.display()))
}

fn load_samples(path: &Path, taxonomy: &LabelTaxonomy) -> Result<Vec<DialogueSample>> {
    load_dataset(path, taxonomy).with_context(|| format!("cannot load dataset {}", path.display()))
}

fn is_mock(agent: &str) -> bool {
    agent == "mock"
}

fn build_agent(args: &AgentArgs, corpus: &[DialogueSample], seed: u64) -> Result<Box<dyn Agent>> {
    if is_mock(&args.agent) {
        return Ok(Box::new(MockAgent::new(corpus, seed).with_epsilon(args.epsilon)));
    }
    if !(args.agent.starts_with("http://") || args.agent.starts_with("https://")) {
        bail!("--agent must be `mock` or an http(s) URL, got {:?}", args.agent);
    }
    let mut cfg = HttpConfig::new(&args.agent).with_key_from_env(AGENT_KEY_VAR);
    cfg.model = args.agent_model.clone();
    cfg.timeout = Duration::from_secs(args.timeout_secs);
    cfg.max_in_flight = args.max_in_flight.max(1);
    Ok(Box::new(RemoteAgent::new(HttpTransport::new(cfg))))
}

/// Rule-base timestamp: SOURCE_DATE_EPOCH when set, 0 for mock runs so they
/// are byte-reproducible, wall clock otherwise.
fn created_at(mock: bool) -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return epoch;
    }
    if mock {
        return 0;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn filter_config(flags: &FilterFlags) -> Result<FilterConfig> {
    for (name, v) in [("--min-reward", flags.min_reward), ("--min-precision", flags.min_precision)] {
        if !(0.0..=1.0).contains(&v) {
            bail!("{name} must be within [0, 1], got {v}");
        }
    }
    Ok(FilterConfig {
        min_reward: flags.min_reward,
        validation: ValidationConfig { min_precision: flags.min_precision, min_support: flags.min_support },
        max_rules_per_label: flags.max_rules_per_label,
    })
}

fn filter_summary(report: &FilterReport, kept: usize) -> Value {
    json!({
        "input": report.input,
        "below_reward": report.below_reward,
        "duplicates": report.duplicates,
        "dominated": report.dominated,
        "failed_validation": report.failed_validation.len(),
        "over_cap": report.over_cap,
        "kept": kept,
    })
}

pub fn rephrase(args: RephraseArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&args.labels)?;
    let train = load_samples(&args.train, &taxonomy)?;
    let agent = build_agent(&args.agent, &train, args.seed)?;
    let cfg = RephraseConfig { per_sample: args.per_sample, workers: args.agent.max_in_flight.max(1), ..Default::default() };
    let out = generate_validation(&train, agent.as_ref(), &cfg)?;
    write_dataset(&args.out, &out.samples)?;
    for id in &out.skipped {
        tracing::warn!(id, "sample skipped after exhausting rephrase attempts");
    }
    print_summary(json!({"written": out.samples.len(), "skipped": out.skipped}));
    Ok(())
}

pub fn induce(args: InduceArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&args.labels)?;
    let train_bytes = fs::read(&args.train).with_context(|| format!("cannot read {}", args.train.display()))?;
    let train = load_samples(&args.train, &taxonomy)?;
    let mut dataset_bytes = train_bytes;
    let split = match &args.val {
        Some(path) => {
            dataset_bytes.extend(fs::read(path).with_context(|| format!("cannot read {}", path.display()))?);
            DatasetSplit { train, validation: load_samples(path, &taxonomy)? }
        }
        None => {
            tracing::info!(fraction = HOLDOUT, "no --val given; holding out part of --train");
            stratified_split(&train, HOLDOUT, args.seed)?
        }
    };
    if split.validation.is_empty() {
        bail!("validation set is empty");
    }

    let search = SearchConfig {
        max_iterations: args.iterations,
        proposals: args.proposals,
        seed: args.seed,
        ..SearchConfig::default()
    };
    let filter = filter_config(&args.filter)?;
    let agent = build_agent(&args.agent, &split.train, args.seed)?;
    let runs = induce_all(&split, &taxonomy, agent.as_ref(), &search, args.trace.is_some())?;

    let mut trace = Vec::new();
    let mut harvested: Vec<Rule> = Vec::new();
    let mut per_label = Vec::new();
    for run in runs {
        if let Some(err) = &run.aborted {
            tracing::error!(label = %run.label, error = %err, "search aborted; keeping partial harvest");
        }
        per_label.push(json!({
            "label": run.label,
            "iterations": run.iterations,
            "nodes": run.nodes,
            "harvested": run.rules.len(),
            "aborted": run.aborted.as_ref().map(ToString::to_string),
        }));
        trace.extend(run.trace.unwrap_or_default());
        harvested.extend(run.rules.into_iter().map(|(r, _)| r));
    }
    if let Some(path) = &args.trace {
        fs::write(path, &trace).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let total = harvested.len();
    let (rules, filter_report) = if args.raw {
        (harvested, None)
    } else {
        let (kept, report) = filter_pipeline(harvested, Some(&split.validation), &filter)?;
        (kept, Some(report))
    };
    let config_digest = digest(
        json!({
            "search": search,
            "min_reward": filter.min_reward,
            "min_precision": filter.validation.min_precision,
            "min_support": filter.validation.min_support,
            "max_rules_per_label": filter.max_rules_per_label,
            "raw": args.raw,
            "agent": args.agent.agent,
            "agent_model": args.agent.agent_model,
            "epsilon": args.agent.epsilon,
        })
        .to_string()
        .as_bytes(),
    );
    let metadata = Metadata {
        created_at: created_at(is_mock(&args.agent.agent)),
        dataset_digest: digest(&dataset_bytes),
        config_digest,
    };
    let rb = RuleBase::new(rules, metadata)?;
    save_rulebase(&rb, &args.out)?;

    print_summary(json!({
        "harvested": total,
        "rules": rb.rules.len(),
        "labels": per_label,
        "filter": filter_report.map(|r| filter_summary(&r, rb.rules.len())),
    }));
    Ok(())
}

pub fn filter(args: FilterArgs) -> Result<()> {
    let rb = load_rulebase(&args.rules)?;
    let cfg = filter_config(&args.filter)?;
    let validation = match (&args.val, &args.labels) {
        (Some(val), Some(labels)) => {
            let taxonomy = load_taxonomy(labels)?;
            rb.check_labels(&taxonomy)?;
            Some(load_samples(val, &taxonomy)?)
        }
        _ => None,
    };
    let (kept, report) = filter_pipeline(rb.rules, validation.as_deref(), &cfg)?;
    let out = RuleBase::new(kept, rb.metadata)?;
    save_rulebase(&out, &args.out)?;
    print_summary(filter_summary(&report, out.rules.len()));
    Ok(())
}

fn parse_stub(arg: &str) -> Result<Option<f64>> {
    let Some(p) = arg.strip_prefix("stub:") else { return Ok(None) };
    let accuracy: f64 = p.parse().with_context(|| format!("bad stub accuracy {p:?}"))?;
    if !(0.0..=1.0).contains(&accuracy) {
        bail!("stub accuracy must be within [0, 1], got {accuracy}");
    }
    Ok(Some(accuracy))
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&args.labels)?;
    let rb = load_rulebase(&args.rules)?;
    rb.check_labels(&taxonomy)?;
    let samples = load_samples(&args.input, &taxonomy)?;

    let predictor: Box<dyn Predictor> = match parse_stub(&args.predictor)? {
        Some(accuracy) => Box::new(StubPredictor::new(accuracy, args.seed, taxonomy.clone())),
        None if args.predictor.starts_with("http://") || args.predictor.starts_with("https://") => {
            let mut cfg = HttpConfig::new(&args.predictor).with_key_from_env(PREDICTOR_KEY_VAR);
            cfg.model = args.predictor_model.clone();
            cfg.timeout = Duration::from_secs(args.timeout_secs);
            cfg.max_in_flight = args.workers.max(1);
            Box::new(RemotePredictor::new(HttpTransport::new(cfg), taxonomy.clone()))
        }
        None => bail!("--predictor must be `stub:<accuracy>` or an http(s) URL, got {:?}", args.predictor),
    };
    if !(0.0..=1.0).contains(&args.override_threshold) {
        bail!("--override-threshold must be within [0, 1], got {}", args.override_threshold);
    }
    let cfg = BatchConfig {
        override_threshold: args.override_threshold,
        failure_budget: args.failure_budget,
        workers: args.workers,
    };
    let (predictions, report) = predict_batch(&rb, predictor.as_ref(), &samples, &cfg)?;
    write_text(&args.out, &predictions_to_jsonl(&predictions))?;
    if let Some(path) = &args.report {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    print_summary(json!({
        "samples": report.samples,
        "rule_overrides": report.rule_overrides,
        "rule_fallbacks": report.rule_fallbacks.len(),
        "abstained": report.abstained.len(),
        "predictor_failures": report.predictor_failures,
    }));
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let taxonomy = load_taxonomy(&args.labels)?;
    let gold = load_samples(&args.gold, &taxonomy)?;
    let text = fs::read_to_string(&args.preds).with_context(|| format!("cannot read {}", args.preds.display()))?;
    let predictions = predictions_from_jsonl(&text)
        .map_err(anyhow::Error::msg)
        .with_context(|| format!("malformed predictions in {}", args.preds.display()))?;
    let report = evaluate(&predictions, &gold, &taxonomy)?;
    if let Some(path) = &args.report {
        write_text(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    print!("{}", report.render());
    Ok(())
}

fn summarize_rules(rb: &RuleBase) -> String {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(Task, &str), Vec<&Rule>> = BTreeMap::new();
    for r in &rb.rules {
        groups.entry((r.task, r.label.as_str())).or_default().push(r);
    }
    let mut out = format!("{} rules (created_at {})\n", rb.rules.len(), rb.metadata.created_at);
    for ((task, label), rules) in groups {
        let mean = rules.iter().map(|r| r.reward).sum::<f64>() / rules.len() as f64;
        let best = rules
            .iter()
            .max_by(|a, b| a.reward.total_cmp(&b.reward).then(b.id.cmp(&a.id)))
            .expect("groups are non-empty");
        let preds: Vec<String> = best.predicates().iter().map(ToString::to_string).collect();
        out.push_str(&format!(
            "{task}/{label}: {} rules, mean reward {mean:.3}; best {:.3}: {}\n",
            rules.len(),
            best.reward,
            preds.join(" AND ")
        ));
    }
    out
}

pub fn report(args: ReportArgs) -> Result<()> {
    if let Some(path) = &args.report {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let report: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("malformed report {}", path.display()))?;
        print!("{}", report.render());
    }
    if let Some(path) = &args.rules {
        print!("{}", summarize_rules(&load_rulebase(path)?));
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let corpus = synthesize(&SynthConfig {
        samples: args.samples,
        intent_labels: args.intent_labels,
        image_labels: args.image_labels,
        plant_rate: args.plant_rate,
        seed: args.seed,
        ..SynthConfig::default()
    })?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    write_dataset(args.out.join("data.jsonl"), &corpus.samples)?;
    write_text(&args.out.join("labels.json"), &(serde_json::to_string_pretty(&corpus.taxonomy)? + "\n"))?;
    print_summary(json!({"samples": corpus.samples.len(), "planted": corpus.planted}));
    Ok(())
}
