//! Matched pre/post survey records: ingestion, vocabulary, encoding,
//! splitting, and synthetic generation.

mod generator;
mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub use generator::{
    answer_label, generate_synthetic, parse_answer_label, synthetic_decks, topic_valence, GeneratorConfig,
    PerQuestion, TopicSpec,
};
pub use oracle::BayesOracle;

/// One participant's answers before and after seeing a deck.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub participant_id: String,
    pub topic: String,
    pub deck_id: Option<String>,
    pub pre_answers: Vec<String>,
    pub post_answers: Vec<String>,
}

impl SurveyRecord {
    pub fn num_questions(&self) -> usize {
        self.pre_answers.len()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.pre_answers.len() != self.post_answers.len() {
            return Err(format!(
                "{} pre answers but {} post answers",
                self.pre_answers.len(),
                self.post_answers.len()
            ));
        }
        if self.pre_answers.is_empty() {
            return Err("no answers".into());
        }
        if self
            .pre_answers
            .iter()
            .chain(&self.post_answers)
            .any(String::is_empty)
        {
            return Err("empty answer string".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    participant_id: Option<String>,
    topic: Option<String>,
    #[serde(default)]
    deck_id: Option<String>,
    pre_answers: Option<Vec<String>>,
    post_answers: Option<Vec<String>>,
}

/// Read line-delimited JSON records.
///
/// When `declared_topics` is given, any other topic is a schema error.
pub fn load_records(path: &Path, declared_topics: Option<&[String]>) -> Result<Vec<SurveyRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let missing = |field: &str| Error::Schema(format!("line {lineno}: missing {field}"));
        let record = SurveyRecord {
            participant_id: raw.participant_id.ok_or_else(|| missing("participant_id"))?,
            topic: raw.topic.ok_or_else(|| missing("topic"))?,
            deck_id: raw.deck_id,
            pre_answers: raw.pre_answers.ok_or_else(|| missing("pre_answers"))?,
            post_answers: raw.post_answers.ok_or_else(|| missing("post_answers"))?,
        };
        record
            .validate()
            .map_err(|m| Error::Schema(format!("line {lineno}: {m}")))?;
        if let Some(topics) = declared_topics {
            if !topics.contains(&record.topic) {
                return Err(Error::Schema(format!(
                    "line {lineno}: unknown topic {:?}",
                    record.topic
                )));
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[SurveyRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn uniform_questions(records: &[SurveyRecord]) -> Result<usize> {
    let q = records
        .first()
        .ok_or_else(|| Error::EmptyInput("no records".into()))?
        .num_questions();
    if let Some(bad) = records.iter().find(|r| r.num_questions() != q) {
        return Err(Error::Schema(format!(
            "record {:?} has {} questions, expected {q}",
            bad.participant_id,
            bad.num_questions()
        )));
    }
    Ok(q)
}

/// Per-question answer strings in sorted order; the position is the id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    per_question: Vec<Vec<String>>,
}

impl AnswerVocabulary {
    pub fn from_answers(per_question: Vec<Vec<String>>) -> Result<Self> {
        for (q, answers) in per_question.iter().enumerate() {
            if answers.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Schema(format!(
                    "question {q}: vocabulary must be sorted and unique"
                )));
            }
        }
        Ok(Self { per_question })
    }

    pub fn num_questions(&self) -> usize {
        self.per_question.len()
    }

    pub fn size(&self, question: usize) -> usize {
        self.per_question[question].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_question.iter().map(Vec::len).collect()
    }

    pub fn answers(&self, question: usize) -> &[String] {
        &self.per_question[question]
    }

    pub fn id(&self, question: usize, answer: &str) -> Result<usize> {
        self.per_question
            .get(question)
            .and_then(|a| a.binary_search_by(|s| s.as_str().cmp(answer)).ok())
            .ok_or_else(|| Error::OutOfVocabulary {
                question,
                answer: answer.to_string(),
            })
    }

    pub fn answer(&self, question: usize, id: usize) -> Result<&str> {
        self.per_question
            .get(question)
            .and_then(|a| a.get(id))
            .map(String::as_str)
            .ok_or(Error::Encoding {
                question,
                id,
                size: self.per_question.get(question).map_or(0, Vec::len),
            })
    }
}

/// Enumerate the distinct pre and post answers of each question.
pub fn build_vocabulary(records: &[SurveyRecord]) -> Result<AnswerVocabulary> {
    let q = uniform_questions(records)?;
    let mut sets: Vec<std::collections::BTreeSet<&str>> = vec![Default::default(); q];
    for r in records {
        for (i, a) in r.pre_answers.iter().chain(&r.post_answers).enumerate() {
            sets[i % q].insert(a);
        }
    }
    AnswerVocabulary::from_answers(
        sets.into_iter()
            .map(|s| s.into_iter().map(str::to_string).collect())
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRecord {
    pub pre_ids: Vec<usize>,
    pub post_ids: Vec<usize>,
}

pub fn encode_record(record: &SurveyRecord, vocab: &AnswerVocabulary) -> Result<EncodedRecord> {
    if record.num_questions() != vocab.num_questions() {
        return Err(Error::Schema(format!(
            "record {:?} has {} questions, vocabulary has {}",
            record.participant_id,
            record.num_questions(),
            vocab.num_questions()
        )));
    }
    let enc = |answers: &[String]| {
        answers
            .iter()
            .enumerate()
            .map(|(q, a)| vocab.id(q, a))
            .collect::<Result<Vec<_>>>()
    };
    Ok(EncodedRecord {
        pre_ids: enc(&record.pre_answers)?,
        post_ids: enc(&record.post_answers)?,
    })
}

/// Inverse of [`encode_record`] for the answer lists.
pub fn decode_answers(ids: &[usize], vocab: &AnswerVocabulary) -> Result<Vec<String>> {
    ids.iter()
        .enumerate()
        .map(|(q, &id)| vocab.answer(q, id).map(str::to_string))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<SurveyRecord>,
    pub validation: Vec<SurveyRecord>,
    pub seed: u64,
}

pub const MIN_SPLIT_RECORDS: usize = 5;

/// Seeded shuffle, then the first `round(ratio * N)` records train.
pub fn split(records: &[SurveyRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if records.len() < MIN_SPLIT_RECORDS {
        return Err(Error::Config(format!(
            "cannot split {} records (need at least {MIN_SPLIT_RECORDS})",
            records.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let n_train = (ratio * records.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..]),
        seed,
    })
}

/// Per topic, per question: fraction of records whose post answer differs
/// from the pre answer.
pub fn measure_shift_rate(records: &[SurveyRecord]) -> Result<BTreeMap<String, Vec<f64>>> {
    let q = uniform_questions(records)?;
    let mut counts: BTreeMap<String, (usize, Vec<usize>)> = BTreeMap::new();
    for r in records {
        let entry = counts
            .entry(r.topic.clone())
            .or_insert_with(|| (0, vec![0; q]));
        entry.0 += 1;
        for (i, (a, b)) in r.pre_answers.iter().zip(&r.post_answers).enumerate() {
            if a != b {
                entry.1[i] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(t, (n, shifted))| (t, shifted.iter().map(|&s| s as f64 / n as f64).collect()))
        .collect())
}
