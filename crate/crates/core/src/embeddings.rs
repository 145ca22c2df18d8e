//! Presentation vectors and answer-embedding tables.
//!
//! Vectors come either from a precomputed file (produced out of process by
//! a sentence-embedding model) or from a deterministic hashing embedder.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnswerVocabulary, SurveyRecord};
use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::rng::fnv1a64;

pub const DEFAULT_DIM: usize = 384;
pub const MIN_DIM: usize = 8;

/// Tolerance on unit norm for every emitted vector.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeckText {
    pub deck_id: String,
    pub topic_keywords: Vec<String>,
    pub slides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Precomputed,
    Hashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresentationVector {
    pub deck_id: String,
    pub vector: Vec<f64>,
    pub source: EmbeddingSource,
}

/// Per question, a `V_q x E` matrix of unit answer embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerEmbeddingTable {
    pub dim: usize,
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl AnswerEmbeddingTable {
    pub fn row(&self, question: usize, id: usize) -> &[f64] {
        &self.rows[question][id]
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Signed feature hashing of lowercase whitespace tokens, L2-normalised.
///
/// Each token hashes with 64-bit FNV-1a; `hash % dim` picks the
/// coordinate and the top bit picks the sign.
pub fn hash_embed(text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim < MIN_DIM {
        return Err(Error::Config(format!(
            "embedding dimension {dim} is below {MIN_DIM}"
        )));
    }
    let mut v = vec![0.0; dim];
    let mut any = false;
    for tok in tokens(text) {
        let h = fnv1a64(tok.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
        any = true;
    }
    if !any {
        return Err(Error::EmptyInput("text to embed has no tokens".into()));
    }
    normalize(v).ok_or_else(|| Error::Numeric(format!("hashed tokens of {text:?} cancel out")))
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = ops::norm(&v);
    if !(n > 1e-12) || !n.is_finite() {
        return None;
    }
    for x in &mut v {
        *x /= n;
    }
    Some(v)
}

/// Mean of unit slide vectors, renormalised.
pub fn pool_deck(
    deck_id: &str,
    slide_vectors: &[Vec<f64>],
    source: EmbeddingSource,
) -> Result<PresentationVector> {
    let first = slide_vectors
        .first()
        .ok_or_else(|| Error::EmptyInput(format!("deck {deck_id:?} has no slides")))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for v in slide_vectors {
        if v.len() != dim {
            return Err(Error::Format(format!(
                "deck {deck_id:?} mixes vector dimensions {dim} and {}",
                v.len()
            )));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let k = slide_vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    let vector = normalize(mean).ok_or_else(|| Error::DegenerateDeck(deck_id.to_string()))?;
    Ok(PresentationVector {
        deck_id: deck_id.to_string(),
        vector,
        source,
    })
}

/// Hash-embed every slide of `deck` and pool.
pub fn embed_deck(deck: &DeckText, dim: usize) -> Result<PresentationVector> {
    let slides = deck
        .slides
        .iter()
        .map(|s| hash_embed(s, dim))
        .collect::<Result<Vec<_>>>()?;
    pool_deck(&deck.deck_id, &slides, EmbeddingSource::Hashed)
}

fn keyword_tokens<'a>(words: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    words
        .into_iter()
        .flat_map(|w| w.split(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Pick the deck a record was shown.
///
/// A known explicit `deck_id` wins. Otherwise the deck whose keywords share
/// the most case-insensitive tokens with the record's topic is chosen, ties
/// going to the lexicographically smaller deck id.
pub fn assign_deck(record: &SurveyRecord, decks: &[DeckText]) -> Result<String> {
    if decks.is_empty() {
        return Err(Error::EmptyInput("no decks to assign from".into()));
    }
    if let Some(id) = &record.deck_id {
        if decks.iter().any(|d| &d.deck_id == id) {
            return Ok(id.clone());
        }
    }
    let topic = keyword_tokens([record.topic.as_str()]);
    let mut best: Option<(usize, &str)> = None;
    for deck in decks {
        let kw = keyword_tokens(deck.topic_keywords.iter().map(String::as_str));
        let overlap = topic.intersection(&kw).count();
        if overlap == 0 {
            continue;
        }
        best = match best {
            Some((o, id)) if o > overlap || (o == overlap && id <= deck.deck_id.as_str()) => {
                Some((o, id))
            }
            _ => Some((overlap, deck.deck_id.as_str())),
        };
    }
    best.map(|(_, id)| id.to_string())
        .ok_or_else(|| Error::UnassignedRecord {
            participant_id: record.participant_id.clone(),
            topic: record.topic.clone(),
        })
}

/// Row `(q, id)` is `embed(q, answer string)`.
pub fn init_answer_table<F>(vocab: &AnswerVocabulary, mut embed: F) -> Result<AnswerEmbeddingTable>
where
    F: FnMut(usize, &str) -> Result<Vec<f64>>,
{
    let mut rows = Vec::with_capacity(vocab.num_questions());
    let mut dim = None;
    for q in 0..vocab.num_questions() {
        let mut table = Vec::with_capacity(vocab.size(q));
        for answer in vocab.answers(q) {
            let v = embed(q, answer)?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Format(format!(
                        "answer embedding dimension changed from {d} to {}",
                        v.len()
                    )))
                }
                _ => {}
            }
            let v = normalize(v).ok_or_else(|| {
                Error::Numeric(format!("zero embedding for question {q} answer {answer:?}"))
            })?;
            table.push(v);
        }
        rows.push(table);
    }
    Ok(AnswerEmbeddingTable {
        dim: dim.unwrap_or(0),
        rows,
    })
}

pub fn deck_key(deck_id: &str) -> String {
    format!("deck:{deck_id}")
}

pub fn answer_key(question: usize, answer: &str) -> String {
    format!("answer:{question}:{answer}")
}

/// Vectors keyed by `deck:<id>` or `answer:<q>:<text>`.
///
/// On disk: a header line `dim<TAB><E>`, then one `key<TAB>v1,v2,...` line
/// per entry. Vectors are renormalised on load; writing emits keys in
/// sorted order with shortest round-trip float formatting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "{key}: dimension {} does not match declared {}",
                vector.len(),
                self.dim
            )));
        }
        let vector = normalize(vector)
            .ok_or_else(|| Error::Format(format!("{key}: zero or non-finite vector")))?;
        if self.entries.insert(key.clone(), vector).is_some() {
            return Err(Error::Format(format!("duplicate key {key:?}")));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "dim\t{}", self.dim)?;
            for (key, v) in &self.entries {
                let floats: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{key}\t{}", floats.join(","))?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

pub fn load_precomputed(path: &Path) -> Result<EmbeddingStore> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing dimension header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let dim = header
        .strip_prefix("dim\t")
        .and_then(|d| d.trim().parse::<usize>().ok())
        .ok_or_else(|| parse_err(1, format!("expected `dim<TAB>E`, got {header:?}")))?;
    let mut store = EmbeddingStore::new(dim);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (key, floats) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, "expected `key<TAB>floats`".into()))?;
        let vector = floats
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, format!("bad float: {e}")))?;
        store.insert(key.to_string(), vector).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}:{lineno}: {m}", path.display())),
            other => other,
        })?;
    }
    Ok(store)
}

pub fn load_decks(path: &Path) -> Result<Vec<DeckText>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut decks: Vec<DeckText> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let deck: DeckText = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if deck.slides.is_empty() || deck.slides.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::Schema(format!(
                "line {}: deck {:?} needs at least one non-empty slide",
                i + 1,
                deck.deck_id
            )));
        }
        if decks.iter().any(|d| d.deck_id == deck.deck_id) {
            return Err(Error::Schema(format!(
                "line {}: duplicate deck id {:?}",
                i + 1,
                deck.deck_id
            )));
        }
        decks.push(deck);
    }
    Ok(decks)
}

pub fn write_decks(path: &Path, decks: &[DeckText]) -> Result<()> {
    let mut out = String::new();
    for d in decks {
        out.push_str(&serde_json::to_string(d).expect("deck serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Presentation vector per deck, from `store` when given, else hashed.
pub fn presentation_vectors(
    decks: &[DeckText],
    store: Option<&EmbeddingStore>,
    dim: usize,
) -> Result<BTreeMap<String, PresentationVector>> {
    let mut out = BTreeMap::new();
    for deck in decks {
        let pv = match store {
            Some(s) => {
                let v = s.get(&deck_key(&deck.deck_id)).ok_or_else(|| {
                    Error::Format(format!("no precomputed vector for deck {:?}", deck.deck_id))
                })?;
                PresentationVector {
                    deck_id: deck.deck_id.clone(),
                    vector: v.to_vec(),
                    source: EmbeddingSource::Precomputed,
                }
            }
            None => embed_deck(deck, dim)?,
        };
        out.insert(deck.deck_id.clone(), pv);
    }
    Ok(out)
}

/// Answer table from `store` when given, else hashed.
pub fn answer_table(
    vocab: &AnswerVocabulary,
    store: Option<&EmbeddingStore>,
    dim: usize,
) -> Result<AnswerEmbeddingTable> {
    match store {
        Some(s) => init_answer_table(vocab, |q, a| {
            s.get(&answer_key(q, a))
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Format(format!("no precomputed vector for {}", answer_key(q, a))))
        }),
        None => init_answer_table(vocab, |_, a| hash_embed(a, dim)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> bool {
        (ops::norm(v) - 1.0).abs() < NORM_TOLERANCE
    }

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("Skincare serum safety", 64).unwrap();
        let b = hash_embed("Skincare serum safety", 64).unwrap();
        assert_eq!(a, b);
        assert!(unit(&a));
        assert_eq!(a, hash_embed("skincare   SERUM safety", 64).unwrap());
    }

    #[test]
    fn hash_embed_rejects_blank_and_small_dim() {
        assert!(matches!(hash_embed("  \t ", 16), Err(Error::EmptyInput(_))));
        assert!(matches!(hash_embed("x", 4), Err(Error::Config(_))));
    }

    #[test]
    fn pool_single_and_identical() {
        let v = hash_embed("ketchup tomato", 32).unwrap();
        let p = pool_deck("d", &[v.clone()], EmbeddingSource::Hashed).unwrap();
        assert!(p.vector.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-15));
        let p2 = pool_deck("d", &[v.clone(), v.clone()], EmbeddingSource::Hashed).unwrap();
        assert!(p2.vector.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn pool_antipodal_is_degenerate() {
        let v = hash_embed("dna storage", 32).unwrap();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!(matches!(
            pool_deck("d", &[v, neg], EmbeddingSource::Hashed),
            Err(Error::DegenerateDeck(_))
        ));
    }

    fn record(topic: &str, deck: Option<&str>) -> SurveyRecord {
        SurveyRecord {
            participant_id: "p".into(),
            topic: topic.into(),
            deck_id: deck.map(Into::into),
            pre_answers: vec!["a".into()],
            post_answers: vec!["a".into()],
        }
    }

    fn deck(id: &str, kw: &[&str]) -> DeckText {
        DeckText {
            deck_id: id.into(),
            topic_keywords: kw.iter().map(|s| s.to_string()).collect(),
            slides: vec!["slide".into()],
        }
    }

    #[test]
    fn assign_deck_rules() {
        let decks = vec![deck("b_skin", &["skincare"]), deck("a_ketchup", &["ketchup"])];
        assert_eq!(assign_deck(&record("x", Some("a_ketchup")), &decks).unwrap(), "a_ketchup");
        assert_eq!(assign_deck(&record("Skincare", None), &decks).unwrap(), "b_skin");
        let tied = vec![deck("z", &["skincare"]), deck("m", &["SKINCARE"])];
        assert_eq!(assign_deck(&record("skincare", None), &tied).unwrap(), "m");
        assert!(matches!(
            assign_deck(&record("politics", None), &decks),
            Err(Error::UnassignedRecord { .. })
        ));
    }

    #[test]
    fn store_normalises_and_rejects_duplicates() {
        let mut s = EmbeddingStore::new(2);
        s.insert("k".into(), vec![3.0, 4.0]).unwrap();
        assert_eq!(s.get("k").unwrap(), &[0.6, 0.8]);
        assert!(s.insert("k".into(), vec![1.0, 0.0]).is_err());
        assert!(s.insert("j".into(), vec![1.0]).is_err());
    }
}
