//! Exact posterior of the synthetic generator.

use super::generator::{answer_label, parse_answer_label, shift_answer, ResolvedTopic};
use super::{GeneratorConfig, SurveyRecord};
use crate::error::{Error, Result};
use crate::numerics::ops::argmax;

/// Closed-form `P(post | pre, topic, question)` for a [`GeneratorConfig`].
#[derive(Clone, Debug)]
pub struct BayesOracle {
    topics: Vec<ResolvedTopic>,
    sizes: Vec<usize>,
    noise: f64,
    n_participants: usize,
}

impl BayesOracle {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        let (topics, sizes) = config.resolve()?;
        Ok(Self {
            topics,
            sizes,
            noise: config.noise_prob,
            n_participants: config.n_participants,
        })
    }

    pub fn topic_index(&self, topic: &str) -> Result<usize> {
        self.topics
            .iter()
            .position(|t| t.name == topic)
            .ok_or_else(|| Error::Schema(format!("topic {topic:?} not in generator config")))
    }

    pub fn valence(&self, topic: usize) -> i8 {
        self.topics[topic].valence
    }

    pub fn answer_counts(&self) -> &[usize] {
        &self.sizes
    }

    pub fn posterior(&self, topic: usize, question: usize, pre: usize) -> Vec<f64> {
        let t = &self.topics[topic];
        let v = self.sizes[question];
        let (c, p) = (t.convergence[question], t.shift[question]);
        let mut probs = vec![self.noise / v as f64; v];
        let keep = 1.0 - self.noise;
        probs[t.consensus] += keep * c;
        probs[shift_answer(pre, t.valence, v)] += keep * p;
        probs[pre] += keep * (1.0 - c - p);
        probs
    }

    /// Argmax of the posterior, lowest id on ties.
    pub fn predict(&self, topic: usize, question: usize, pre: usize) -> usize {
        argmax(&self.posterior(topic, question, pre))
    }

    /// Predicted post answers, as generator labels, for a generated record.
    pub fn predict_record(&self, record: &SurveyRecord) -> Result<Vec<String>> {
        let topic = self.topic_index(&record.topic)?;
        if record.pre_answers.len() != self.sizes.len() {
            return Err(Error::Schema(format!(
                "record {:?} has {} answers, generator has {} questions",
                record.participant_id,
                record.pre_answers.len(),
                self.sizes.len()
            )));
        }
        record
            .pre_answers
            .iter()
            .enumerate()
            .map(|(q, label)| {
                let pre = parse_answer_label(label)
                    .filter(|&id| id < self.sizes[q])
                    .ok_or_else(|| Error::OutOfVocabulary {
                        question: q,
                        answer: label.clone(),
                    })?;
                Ok(answer_label(self.predict(topic, q, pre)))
            })
            .collect()
    }

    /// Expected fraction of changed answers under a uniform pre answer.
    pub fn expected_shift_rate(&self, topic: usize, question: usize) -> f64 {
        let v = self.sizes[question];
        (0..v)
            .map(|x| 1.0 - self.posterior(topic, question, x)[x])
            .sum::<f64>()
            / v as f64
    }

    /// Share of participants assigned to each topic (round-robin).
    pub fn topic_weights(&self) -> Vec<f64> {
        let t = self.topics.len();
        let n = self.n_participants.max(1);
        (0..t)
            .map(|i| {
                let count = self.n_participants / t + usize::from(i < self.n_participants % t);
                count as f64 / n as f64
            })
            .collect()
    }

    /// Marginal distribution of the post answer to `question`.
    pub fn post_marginal(&self, question: usize) -> Vec<f64> {
        let v = self.sizes[question];
        let mut out = vec![0.0; v];
        for (topic, w) in self.topic_weights().into_iter().enumerate() {
            for pre in 0..v {
                for (o, p) in out.iter_mut().zip(self.posterior(topic, question, pre)) {
                    *o += w * p / v as f64;
                }
            }
        }
        out
    }
}
