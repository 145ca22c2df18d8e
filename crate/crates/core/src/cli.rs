//! Command implementations behind the `opinionxf` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{CheckpointFile, LoadedModel};
use crate::config::RunConfig;
use crate::dataset::{
    answer_label, generate_synthetic, load_records, measure_shift_rate, synthetic_decks,
    write_records,
};
use crate::embeddings::{answer_key, deck_key, embed_deck, hash_embed, write_decks, EmbeddingStore};
use crate::error::{Error, Result};
use crate::evaluation::{run_comparison, ComparisonTable, EvalReport, Predictor};
use crate::training::{self, TrainConfig, TrainHistory};
use crate::verify::{self, Check};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const DECKS_FILE: &str = "decks.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const SHIFT_RATES_FILE: &str = "shift_rates.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const TOPICS_FILE: &str = "eval_topics.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct DatagenSummary {
    pub shift_rates: BTreeMap<String, Vec<f64>>,
    pub records: PathBuf,
    pub config_hash: String,
}

fn shift_rates_csv(rates: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::from("topic,question,shift_rate\n");
    for (topic, per_q) in rates {
        for (q, r) in per_q.iter().enumerate() {
            let _ = writeln!(out, "{topic},{q},{r}");
        }
    }
    out
}

/// Write the synthetic corpus, its decks, and hashed embeddings for every
/// deck and answer into `out`.
pub fn cmd_datagen(config: &RunConfig, out: &Path) -> Result<DatagenSummary> {
    create_dir(out)?;
    let gen = &config.generator;
    let records = generate_synthetic(gen)?;
    let decks = synthetic_decks(gen);
    let mut store = EmbeddingStore::new(gen.embedding_dim);
    for d in &decks {
        store.insert(deck_key(&d.deck_id), embed_deck(d, gen.embedding_dim)?.vector)?;
    }
    for (q, &v) in gen.answer_counts()?.iter().enumerate() {
        for id in 0..v {
            let label = answer_label(id);
            store.insert(answer_key(q, &label), hash_embed(&label, gen.embedding_dim)?)?;
        }
    }
    let path = out.join(RECORDS_FILE);
    write_records(&path, &records)?;
    write_decks(&out.join(DECKS_FILE), &decks)?;
    store.write(&out.join(EMBEDDINGS_FILE))?;
    let shift_rates = measure_shift_rate(&records)?;
    write(&out.join(SHIFT_RATES_FILE), &shift_rates_csv(&shift_rates))?;
    Ok(DatagenSummary {
        shift_rates,
        records: path,
        config_hash: config.echo(out)?,
    })
}

pub struct TrainSummary {
    pub checkpoint: training::Checkpoint,
    pub history: TrainHistory,
    pub config_hash: String,
}

/// Train the model described by `[model]`, writing the best checkpoint and
/// the per-epoch history.
pub fn cmd_train(config: &RunConfig, out: &Path, mut log: impl FnMut(&str)) -> Result<TrainSummary> {
    create_dir(out)?;
    let config_hash = config.echo(out)?;
    let prep = config.prepare()?;
    log(&format!(
        "{} records: {} train, {} validation",
        prep.records.len(),
        prep.split.train.len(),
        prep.split.validation.len()
    ));
    let (checkpoint, history) =
        training::train_with(&prep.split, &prep.corpus, &config.training, &config.model, |e| {
            log(&format!(
                "epoch {:>3}  train {:.4}  val {:.4}  val macro-F1 {:.4}  lr {:.2e}",
                e.epoch, e.train_loss, e.val_loss, e.val_macro_f1, e.lr
            ))
        })?;
    history.write_csv(&out.join(HISTORY_FILE))?;
    CheckpointFile::from_checkpoint(&prep.corpus.context, &checkpoint).save(&out.join(CHECKPOINT_FILE))?;
    log(&format!(
        "best epoch {}: val loss {:.6}, val macro-F1 {:.4}",
        checkpoint.epoch, checkpoint.val_loss, checkpoint.val_macro_f1
    ));
    Ok(TrainSummary {
        checkpoint,
        history,
        config_hash,
    })
}

pub struct EvalOutcome {
    pub report: EvalReport,
    /// Mean total loss, for trained models.
    pub loss: Option<f64>,
    pub kind: &'static str,
}

/// Evaluate a checkpoint on every record of `dataset`, or, without one, on
/// the validation part of the split `config` defines.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: Option<&Path>,
    config: &RunConfig,
    out: &Path,
) -> Result<EvalOutcome> {
    create_dir(out)?;
    let file = CheckpointFile::load(checkpoint)?;
    let model = file.model()?;
    let records = match dataset {
        Some(d) => load_records(d, None)?,
        None => config.prepare()?.split.validation,
    };
    let examples = file.context.examples(&records)?;
    let report = model.evaluate(&examples)?;
    let loss = match &model {
        LoadedModel::OpinionXf(ck) => Some(
            training::evaluate_examples(&ck.params, &examples, config.training.lambda_contrastive)?.0,
        ),
        LoadedModel::Majority(_) => None,
    };
    write(&out.join(EVAL_FILE), &report.to_csv())?;
    write(&out.join(TOPICS_FILE), &report.topics_csv())?;
    Ok(EvalOutcome {
        report,
        loss,
        kind: model.kind(),
    })
}

/// Train the three variants and three baselines on one split and write
/// the comparison table plus every system's reports and checkpoints.
pub fn cmd_compare(config: &RunConfig, out: &Path, mut log: impl FnMut(&str)) -> Result<ComparisonTable> {
    create_dir(out)?;
    config.echo(out)?;
    let prep = config.prepare()?;
    let outcome = run_comparison(&prep.split, &prep.corpus, &config.training, &config.model, &mut log)?;
    for r in &outcome.results {
        write(&out.join(format!("eval_{}.csv", r.name)), &r.report.to_csv())?;
        write(&out.join(format!("topics_{}.csv", r.name)), &r.report.topics_csv())?;
    }
    for (v, ck, history) in &outcome.checkpoints {
        history.write_csv(&out.join(format!("history_{}.csv", v.name())))?;
        CheckpointFile::from_checkpoint(&prep.corpus.context, ck)
            .save(&out.join(format!("checkpoint_{}.json", v.name())))?;
    }
    CheckpointFile::from_majority(&prep.corpus.context, &outcome.majority)
        .save(&out.join("checkpoint_majority.json"))?;
    write(&out.join(COMPARISON_FILE), &outcome.table.to_csv())?;
    Ok(outcome.table)
}

pub fn cmd_verify() -> Vec<Check> {
    verify::run_suite()
}

/// Training settings with the thread count from the command line applied.
pub fn with_threads(config: &TrainConfig, threads: Option<usize>) -> TrainConfig {
    TrainConfig {
        threads: threads.unwrap_or(config.threads),
        ..config.clone()
    }
}
