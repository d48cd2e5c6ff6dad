//! Rule induction for multimodal dialogue classification.
//!
//! An agent proposes string predicates over dialogue turns and OCR text; a
//! Monte Carlo tree search grows conjunctive rules from them; surviving
//! high-reward rules form a rule base that overrides a base predictor when
//! they fire.
//!
//! ```
//! use rulesmith_core::{parse_predicate, DialogueSample, Task, Turn, eval_predicate};
//!
//! let p = parse_predicate(r#"user_text contains "退货""#).unwrap();
//! let s = DialogueSample {
//!     id: "1".into(),
//!     task: Task::Intent,
//!     turns: vec![Turn::user("我想退货")],
//!     ocr_text: String::new(),
//!     image_ref: None,
//!     gold_label: None,
//! };
//! assert!(eval_predicate(&p, &s));
//! ```

pub mod agents;
pub mod dataset;
pub mod inference;
pub mod mcts;
pub mod metrics;
pub mod predicate;
pub mod rulebase;
pub mod synth;
pub mod text;
pub mod transport;

pub use agents::{Agent, AgentContext, AgentError, MockAgent, RemoteAgent, Rephraser, RewardEstimate};
pub use dataset::{
    load_dataset, read_dataset, write_dataset, DatasetError, DatasetSplit, DialogueSample, LabelTaxonomy,
    Speaker, Task, Turn,
};
pub use inference::{
    arbitrate, predict_batch, BatchConfig, Prediction, PredictionSource, Predictor, PredictorError,
    StubPredictor,
};
pub use mcts::{run_search, SearchConfig, SearchOutcome};
pub use metrics::{evaluate, weighted_f1, EvalReport, MetricError};
pub use predicate::{
    eval_predicate, eval_rule, parse_predicate, Field, Op, ParseError, Predicate, Rule, RuleSource,
};
pub use rulebase::{filter_pipeline, load_rulebase, remove_dominated, save_rulebase, FilterConfig, RuleBase};
pub use transport::{ChatTransport, HttpConfig, HttpTransport};
