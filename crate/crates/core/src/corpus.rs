//! Everything derived from a record set that the models need: vocabulary,
//! decks, presentation vectors, and the answer-embedding table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_vocabulary, encode_record, AnswerVocabulary, SurveyRecord};
use crate::embeddings::{
    answer_table, assign_deck, presentation_vectors, AnswerEmbeddingTable, DeckText,
    EmbeddingStore,
};
use crate::error::{Error, Result};
use crate::model::Example;

/// The parts of a corpus stored alongside a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusContext {
    pub vocab: AnswerVocabulary,
    pub decks: Vec<DeckText>,
    pub presentations: BTreeMap<String, Vec<f64>>,
}

impl CorpusContext {
    pub fn embedding_dim(&self) -> usize {
        self.presentations.values().next().map_or(0, Vec::len)
    }

    pub fn deck_vector(&self, record: &SurveyRecord) -> Result<&[f64]> {
        let id = assign_deck(record, &self.decks)?;
        self.presentations
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("deck {id:?} has no presentation vector")))
    }

    pub fn example(&self, record: &SurveyRecord) -> Result<Example> {
        let enc = encode_record(record, &self.vocab)?;
        Ok(Example {
            pre_ids: enc.pre_ids,
            post_ids: enc.post_ids,
            deck: self.deck_vector(record)?.to_vec(),
            topic: record.topic.clone(),
        })
    }

    pub fn examples(&self, records: &[SurveyRecord]) -> Result<Vec<Example>> {
        records.iter().map(|r| self.example(r)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub context: CorpusContext,
    pub answer_table: AnswerEmbeddingTable,
}

impl Corpus {
    /// Vocabulary over `records`; vectors from `store` when given, hashed
    /// at dimension `dim` otherwise.
    pub fn build(
        records: &[SurveyRecord],
        decks: Vec<DeckText>,
        store: Option<&EmbeddingStore>,
        dim: usize,
    ) -> Result<Self> {
        let dim = store.map_or(dim, |s| s.dim);
        let vocab = build_vocabulary(records)?;
        let presentations = presentation_vectors(&decks, store, dim)?
            .into_iter()
            .map(|(k, v)| (k, v.vector))
            .collect();
        let answer_table = answer_table(&vocab, store, dim)?;
        Ok(Self {
            context: CorpusContext {
                vocab,
                decks,
                presentations,
            },
            answer_table,
        })
    }

    pub fn vocab(&self) -> &AnswerVocabulary {
        &self.context.vocab
    }

    pub fn examples(&self, records: &[SurveyRecord]) -> Result<Vec<Example>> {
        self.context.examples(records)
    }
}
