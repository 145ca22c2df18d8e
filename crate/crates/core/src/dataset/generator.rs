use serde::{Deserialize, Serialize};

use super::SurveyRecord;
use crate::embeddings::{self, DeckText};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A value given once for every question, or per question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerQuestion<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerQuestion<T> {
    pub fn resolve(&self, questions: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerQuestion::All(v) => Ok(vec![v.clone(); questions]),
            PerQuestion::Each(vs) if vs.len() == questions => Ok(vs.clone()),
            PerQuestion::Each(vs) => Err(Error::Config(format!(
                "{what}: {} values for {questions} questions",
                vs.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    /// Probability that an answer moves one step in the deck's direction.
    pub shift_prob: PerQuestion<f64>,
    /// Probability that an answer collapses onto `consensus_option`.
    pub convergence_prob: PerQuestion<f64>,
    pub consensus_option: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub topics: Vec<TopicSpec>,
    pub n_participants: usize,
    pub questions: usize,
    pub answers_per_question: PerQuestion<usize>,
    pub noise_prob: f64,
    pub seed: u64,
    pub embedding_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let topic = |name: &str, shift: Vec<f64>, conv: Vec<f64>, consensus| TopicSpec {
            name: name.into(),
            shift_prob: PerQuestion::Each(shift),
            convergence_prob: PerQuestion::Each(conv),
            consensus_option: consensus,
        };
        Self {
            topics: vec![
                topic(
                    "skincare",
                    vec![0.45, 0.3, 0.5, 0.2, 0.45, 0.3, 0.5, 0.1],
                    vec![0.1, 0.0, 0.2, 0.0, 0.2, 0.0, 0.1, 0.6],
                    1,
                ),
                topic(
                    "ketchup",
                    vec![0.1, 0.05, 0.1, 0.05, 0.15, 0.05, 0.1, 0.05],
                    vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6],
                    0,
                ),
                topic(
                    "dna_storage",
                    vec![0.5, 0.45, 0.55, 0.45, 0.5, 0.45, 0.55, 0.1],
                    vec![0.2, 0.25, 0.1, 0.25, 0.2, 0.25, 0.1, 0.7],
                    2,
                ),
            ],
            n_participants: 1000,
            questions: 8,
            answers_per_question: PerQuestion::Each(vec![3, 4, 5, 3, 4, 5, 3, 4]),
            noise_prob: 0.05,
            seed: 17,
            embedding_dim: embeddings::DEFAULT_DIM,
        }
    }
}

/// Topic parameters with per-question values expanded.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ResolvedTopic {
    pub name: String,
    pub shift: Vec<f64>,
    pub convergence: Vec<f64>,
    pub consensus: usize,
    pub valence: i8,
}

impl GeneratorConfig {
    pub fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.name.clone()).collect()
    }

    pub fn answer_counts(&self) -> Result<Vec<usize>> {
        self.answers_per_question
            .resolve(self.questions, "answers_per_question")
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    pub(crate) fn resolve(&self) -> Result<(Vec<ResolvedTopic>, Vec<usize>)> {
        if self.questions == 0 {
            return Err(Error::Config("generator needs at least one question".into()));
        }
        if self.topics.is_empty() {
            return Err(Error::Config("generator needs at least one topic".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::Config(format!("noise_prob {} outside [0, 1]", self.noise_prob)));
        }
        let sizes = self.answer_counts()?;
        if let Some(v) = sizes.iter().find(|&&v| v < 2) {
            return Err(Error::Config(format!("a question has {v} answers; need at least 2")));
        }
        let decks = synthetic_decks(self);
        let mut topics = Vec::with_capacity(self.topics.len());
        for (spec, deck) in self.topics.iter().zip(&decks) {
            if topics.iter().any(|t: &ResolvedTopic| t.name == spec.name) {
                return Err(Error::Config(format!("duplicate topic {:?}", spec.name)));
            }
            let what = |f: &str| format!("topic {:?} {f}", spec.name);
            let shift = spec.shift_prob.resolve(self.questions, &what("shift_prob"))?;
            let convergence = spec
                .convergence_prob
                .resolve(self.questions, &what("convergence_prob"))?;
            for (q, (&p, &c)) in shift.iter().zip(&convergence).enumerate() {
                if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&c) || p + c > 1.0 + 1e-12 {
                    return Err(Error::Config(format!(
                        "{} question {q}: need p, c in [0, 1] and p + c <= 1 (p={p}, c={c})",
                        spec.name
                    )));
                }
            }
            if let Some((q, v)) = sizes
                .iter()
                .enumerate()
                .find(|(_, &v)| spec.consensus_option >= v)
            {
                return Err(Error::Config(format!(
                    "{}: consensus_option {} out of range for question {q} with {v} answers",
                    spec.name, spec.consensus_option
                )));
            }
            let pv = embeddings::embed_deck(deck, self.embedding_dim)?;
            topics.push(ResolvedTopic {
                name: spec.name.clone(),
                shift,
                convergence,
                consensus: spec.consensus_option,
                valence: topic_valence(&pv.vector),
            });
        }
        Ok((topics, sizes))
    }
}

/// `+1` when the first coordinate is non-negative, else `-1`.
pub fn topic_valence(presentation: &[f64]) -> i8 {
    if presentation.first().copied().unwrap_or(0.0) < 0.0 {
        -1
    } else {
        1
    }
}

pub fn answer_label(id: usize) -> String {
    format!("opt_{id}")
}

/// Inverse of [`answer_label`].
pub fn parse_answer_label(label: &str) -> Option<usize> {
    label.strip_prefix("opt_")?.parse().ok()
}

fn deck_id(topic: &str) -> String {
    format!("deck_{topic}")
}

/// One plain-text deck per topic, keyed by the topic's words.
pub fn synthetic_decks(config: &GeneratorConfig) -> Vec<DeckText> {
    config
        .topics
        .iter()
        .map(|t| {
            let words = t.name.replace(['_', '-'], " ");
            DeckText {
                deck_id: deck_id(&t.name),
                topic_keywords: vec![t.name.clone()],
                slides: vec![
                    format!("{words} overview and background"),
                    format!("reported benefits of {words} for everyday users"),
                    format!("risks and open concerns about {words}"),
                    format!("balanced summary of the evidence on {words}"),
                ],
            }
        })
        .collect()
}

pub(crate) fn shift_answer(pre: usize, valence: i8, size: usize) -> usize {
    if valence < 0 {
        pre.saturating_sub(1)
    } else {
        (pre + 1).min(size - 1)
    }
}

/// Draw a corpus from the generative process.
///
/// Participant `i` answers topic `i mod T`. Per question the pre answer is
/// uniform; then `u ~ U[0,1)` picks consensus (`u < c`), a one-step shift
/// toward the deck's valence (`u < c + p`), or no change; finally, with
/// probability `noise_prob`, the post answer is redrawn uniformly.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Vec<SurveyRecord>> {
    let (topics, sizes) = config.resolve()?;
    let mut rng = SeededRng::new(config.seed);
    let mut out = Vec::with_capacity(config.n_participants);
    for i in 0..config.n_participants {
        let topic = &topics[i % topics.len()];
        let pre: Vec<usize> = sizes.iter().map(|&v| rng.below(v)).collect();
        let post: Vec<usize> = pre
            .iter()
            .zip(&sizes)
            .enumerate()
            .map(|(q, (&x, &v))| {
                let u = rng.uniform();
                let (c, p) = (topic.convergence[q], topic.shift[q]);
                let y = if u < c {
                    topic.consensus
                } else if u < c + p {
                    shift_answer(x, topic.valence, v)
                } else {
                    x
                };
                if rng.uniform() < config.noise_prob {
                    rng.below(v)
                } else {
                    y
                }
            })
            .collect();
        out.push(SurveyRecord {
            participant_id: format!("p{i:05}"),
            topic: topic.name.clone(),
            // Odd participants omit the deck column; keyword matching
            // recovers it.
            deck_id: (i % 2 == 0).then(|| deck_id(&topic.name)),
            pre_answers: pre.into_iter().map(answer_label).collect(),
            post_answers: post.into_iter().map(answer_label).collect(),
        });
    }
    Ok(out)
}
