//! Seeded synthetic corpora with planted label cues.
//!
//! Every label gets a distinct CJK bigram that appears only in samples of
//! that label (in a `plant_rate` fraction of them), plus an ASCII weak cue
//! that is more frequent in the label than elsewhere. The rest of each text
//! is filler words drawn from a shared vocabulary.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, DialogueSample, LabelTaxonomy, Task, Turn};

const PLANTED: [&str; 8] = ["退货", "物流", "发票", "尺码", "截图", "包装", "瑕疵", "订单"];
const FILLER_WORDS: usize = 200;
const WEAK_CUE_POS: f64 = 0.6;
const WEAK_CUE_NEG: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub samples: usize,
    pub intent_labels: usize,
    pub image_labels: usize,
    /// Fraction of each label's samples that carry the planted token.
    pub plant_rate: f64,
    /// Filler words per text field.
    pub filler: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { samples: 500, intent_labels: 2, image_labels: 2, plant_rate: 1.0, filler: 6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub taxonomy: LabelTaxonomy,
    /// Ordered by id.
    pub samples: Vec<DialogueSample>,
    /// Planted token per label.
    pub planted: BTreeMap<String, String>,
    /// Weak cue token per label.
    pub weak_cues: BTreeMap<String, String>,
}

fn filler_word(i: usize) -> String {
    format!("f{i:03}")
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| filler_word(rng.random_range(0..FILLER_WORDS))).collect()
}

/// Inserts `token` at a random position among `words`.
fn insert(rng: &mut ChaCha8Rng, words: &mut Vec<String>, token: &str) {
    let at = rng.random_range(0..=words.len());
    words.insert(at, token.to_string());
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SyntheticCorpus, DatasetError> {
    let n_labels = cfg.intent_labels + cfg.image_labels;
    if n_labels == 0 || n_labels > PLANTED.len() {
        return Err(DatasetError::InvalidArgument(format!(
            "need between 1 and {} labels, got {n_labels}",
            PLANTED.len()
        )));
    }
    if cfg.samples < n_labels {
        return Err(DatasetError::InvalidArgument(format!(
            "{} samples cannot cover {n_labels} labels",
            cfg.samples
        )));
    }
    if !(0.0..=1.0).contains(&cfg.plant_rate) {
        return Err(DatasetError::InvalidArgument(format!("plant_rate {} is outside [0, 1]", cfg.plant_rate)));
    }

    let intent: Vec<String> = (0..cfg.intent_labels).map(|i| format!("intent_{i}")).collect();
    let image: Vec<String> = (0..cfg.image_labels).map(|i| format!("scene_{i}")).collect();
    let labels: Vec<(Task, String)> = intent
        .iter()
        .map(|l| (Task::Intent, l.clone()))
        .chain(image.iter().map(|l| (Task::ImageScene, l.clone())))
        .collect();
    let taxonomy = LabelTaxonomy::new(intent, image)?;
    let planted: BTreeMap<String, String> =
        labels.iter().zip(PLANTED).map(|((_, l), t)| (l.clone(), t.to_string())).collect();
    let weak_cues: BTreeMap<String, String> =
        labels.iter().enumerate().map(|(i, (_, l))| (l.clone(), format!("cue{i}"))).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut assignment: Vec<usize> = (0..cfg.samples).map(|i| i % n_labels).collect();
    assignment.shuffle(&mut rng);

    // exactly round(plant_rate * n) samples per label carry the planted token
    let mut plant = vec![false; cfg.samples];
    for label in 0..n_labels {
        let mut members: Vec<usize> = (0..cfg.samples).filter(|&i| assignment[i] == label).collect();
        members.shuffle(&mut rng);
        let take = (cfg.plant_rate * members.len() as f64).round() as usize;
        for &i in &members[..take] {
            plant[i] = true;
        }
    }

    let width = cfg.samples.to_string().len();
    let samples = (0..cfg.samples)
        .map(|i| {
            let (task, label) = &labels[assignment[i]];
            let mut primary = filler(&mut rng, cfg.filler);
            for (j, (_, other)) in labels.iter().enumerate() {
                let p = if j == assignment[i] { WEAK_CUE_POS } else { WEAK_CUE_NEG / (n_labels as f64) };
                if rng.random_bool(p) {
                    insert(&mut rng, &mut primary, &weak_cues[other]);
                }
            }
            if plant[i] {
                insert(&mut rng, &mut primary, &planted[label]);
            }
            let secondary = filler(&mut rng, cfg.filler.div_ceil(2));
            let (turns, ocr_text) = match task {
                Task::Intent => (
                    vec![Turn::user(primary.join(" ")), Turn::service(secondary.join(" "))],
                    filler(&mut rng, 2).join(" "),
                ),
                Task::ImageScene => (vec![Turn::user(secondary.join(" "))], primary.join(" ")),
            };
            let image_ref = (*task == Task::ImageScene)
                .then(|| format!("img/{}.png", ["a", "b", "c"].choose(&mut rng).expect("non-empty")));
            DialogueSample {
                id: format!("syn-{i:0width$}"),
                task: *task,
                turns,
                ocr_text,
                image_ref,
                gold_label: Some(label.clone()),
            }
        })
        .collect();

    Ok(SyntheticCorpus { taxonomy, samples, planted, weak_cues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{measure_rule, Field, Op, Predicate, Rule, RuleSource};

    fn planted_rule(corpus: &SyntheticCorpus, label: &str) -> Rule {
        let task = corpus.taxonomy.task_of(label).unwrap();
        let p = Predicate::new(Field::AnyText, Op::Contains, corpus.planted[label].clone()).unwrap();
        Rule::new("p", task, label, [p], 1.0, 1.0, RuleSource::Manual).unwrap()
    }

    #[test]
    fn planted_tokens_are_perfect() {
        let corpus = synthesize(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.samples.len(), 500);
        for label in corpus.taxonomy.all_labels() {
            let q = measure_rule(&planted_rule(&corpus, label), &corpus.samples);
            assert_eq!(q.precision, Some(1.0));
            assert_eq!(q.coverage, 125);
        }
    }

    #[test]
    fn plant_rate_controls_coverage() {
        let cfg = SynthConfig { samples: 400, plant_rate: 0.4, ..SynthConfig::default() };
        let corpus = synthesize(&cfg).unwrap();
        for label in corpus.taxonomy.all_labels() {
            let q = measure_rule(&planted_rule(&corpus, label), &corpus.samples);
            assert_eq!((q.coverage, q.correct), (40, 40));
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = synthesize(&SynthConfig { seed: 9, ..SynthConfig::default() }).unwrap();
        let b = synthesize(&SynthConfig { seed: 9, ..SynthConfig::default() }).unwrap();
        assert_eq!(a.samples, b.samples);
        let mut buf = Vec::new();
        for s in &a.samples {
            buf.extend(serde_json::to_vec(s).unwrap());
            buf.push(b'\n');
        }
        let back = crate::dataset::read_dataset(buf.as_slice(), &a.taxonomy).unwrap();
        assert_eq!(back, a.samples);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(synthesize(&SynthConfig { intent_labels: 0, image_labels: 0, ..SynthConfig::default() }).is_err());
        assert!(synthesize(&SynthConfig { intent_labels: 9, ..SynthConfig::default() }).is_err());
        assert!(synthesize(&SynthConfig { plant_rate: 1.5, ..SynthConfig::default() }).is_err());
        assert!(synthesize(&SynthConfig { samples: 3, ..SynthConfig::default() }).is_err());
    }
}
