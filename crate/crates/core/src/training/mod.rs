//! Combined loss, AdamW with per-step cosine annealing and global-norm
//! clipping, and the epoch loop with best-by-validation checkpointing.

mod loss;
mod optim;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use loss::{alignment_active, cosine_alignment_loss, cross_entropy_total, loss_on_graph, total_loss};
pub use optim::{adamw_step, clip_gradients, cosine_anneal_lr, AdamW, AdamWHyper};

use crate::corpus::Corpus;
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::evaluation::metrics;
use crate::model::{self, forward, Example, ForwardOptions, ModelConfig, OpinionXfParams};
use crate::numerics::graph::Graph;
use crate::numerics::{ops, Tensor};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// 64, or 32 for the quantum variant, when unset.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub lambda_contrastive: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Fraction of records used for training; the rest is validation.
    pub train_ratio: f64,
    /// Worker threads for the per-batch forward/backward; 1 is sequential.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 2e-3,
            lr_min: 0.0,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            batch_size: None,
            epochs: 40,
            lambda_contrastive: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 17,
            train_ratio: 0.8,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, model: &ModelConfig) -> usize {
        self.batch_size
            .unwrap_or(if model.use_quantum { 32 } else { 64 })
    }

    pub fn hyper(&self) -> AdamWHyper {
        AdamWHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_max > self.lr_min && self.lr_min >= 0.0) {
            return bad(format!(
                "need lr_max > lr_min >= 0, got {} and {}",
                self.lr_max, self.lr_min
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.batch_size == Some(0) || self.epochs == 0 || self.threads == 0 {
            return bad("batch_size, epochs and threads must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("AdamW betas must lie in [0, 1) and eps be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.lambda_contrastive >= 0.0) {
            return bad("weight_decay and lambda_contrastive must be non-negative".into());
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad(format!("train_ratio {} outside (0, 1)", self.train_ratio));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the JSON form of both configurations.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_string(&(model, train)).expect("configs serialize");
    hex_digest(json.as_bytes())
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: OpinionXfParams,
    pub epoch: usize,
    pub val_loss: f64,
    pub val_macro_f1: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
    /// Rate used for the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,val_macro_f1,lr";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_macro_f1, e.lr
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut epochs = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("history row {}: {e}", i + 1)))?;
            let field = |j: usize| -> Result<f64> {
                row.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("history row {} column {j}", i + 1)))
            };
            epochs.push(EpochRecord {
                epoch: field(0)? as usize,
                train_loss: field(1)?,
                val_loss: field(2)?,
                val_macro_f1: field(3)?,
                lr: field(4)?,
            });
        }
        Ok(Self { epochs })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_loss).reduce(f64::min)
    }
}

/// Loss and parameter gradients for one batch, each example's share
/// divided by `denominator`. Work is split into `chunks` contiguous pieces
/// (run on `pool` when given) and reduced in chunk order.
pub fn batch_gradients(
    params: &OpinionXfParams,
    batch: &[&Example],
    lambda: f64,
    denominator: f64,
    chunks: usize,
    pool: Option<&rayon::ThreadPool>,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Tensor>)> {
    let shapes = params.shapes();
    let size = batch.len().div_ceil(chunks.max(1)).max(1);
    let run = |(ci, part): (usize, &[&Example])| -> Result<(f64, Vec<Tensor>)> {
        let mut rng = dropout_seed.map(|s| SeededRng::derived(s, &format!("dropout/{ci}")));
        let mut g = Graph::new();
        let pass = forward(
            &mut g,
            params,
            part,
            ForwardOptions {
                dropout_rng: rng.as_mut(),
                pinned_quantum: None,
            },
        )?;
        let root = loss_on_graph(&mut g, params, &pass, part, lambda, denominator)?;
        let loss = g.value(root).item();
        Ok((loss, g.backward(root).params(&g, &shapes)))
    };
    let pieces: Vec<(usize, &[&Example])> = batch.chunks(size).enumerate().collect();
    let results: Vec<Result<(f64, Vec<Tensor>)>> = match pool {
        Some(pool) if pieces.len() > 1 => pool.install(|| pieces.par_iter().map(|&p| run(p)).collect()),
        _ => pieces.iter().map(|&p| run(p)).collect(),
    };
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for r in results {
        let (l, gs) = r?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(gs),
            Some(acc) => acc.iter_mut().zip(&gs).for_each(|(a, g)| a.add_assign(g)),
        }
    }
    Ok((loss, grads.expect("at least one chunk")))
}

const EVAL_BATCH: usize = 256;

/// Mean total loss and argmax predictions over `examples`, without dropout.
pub fn evaluate_examples(
    params: &OpinionXfParams,
    examples: &[Example],
    lambda: f64,
) -> Result<(f64, Vec<Vec<usize>>)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no examples to evaluate".into()));
    }
    let n = examples.len() as f64;
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut g = Graph::new();
        let pass = forward(&mut g, params, &refs, ForwardOptions::default())?;
        let root = loss_on_graph(&mut g, params, &pass, &refs, lambda, n)?;
        loss += g.value(root).item();
        let mut rows = vec![Vec::with_capacity(pass.logits.len()); chunk.len()];
        for &lv in &pass.logits {
            let t = g.value(lv);
            for (i, row) in rows.iter_mut().enumerate() {
                row.push(ops::argmax(t.row(i)));
            }
        }
        preds.extend(rows);
    }
    Ok((loss, preds))
}

/// Mean total loss and macro-F1 on `examples`.
pub fn validation_metrics(
    params: &OpinionXfParams,
    examples: &[Example],
    lambda: f64,
) -> Result<(f64, f64)> {
    let (loss, preds) = evaluate_examples(params, examples, lambda)?;
    let gold: Vec<Vec<usize>> = examples.iter().map(|e| e.post_ids.clone()).collect();
    let f1 = metrics::macro_f1(&metrics::cells(&preds), &metrics::cells(&gold))?;
    Ok((loss, f1))
}

/// Fill vocabulary sizes from the corpus and check the embedding width.
pub fn resolve_model_config(model: &ModelConfig, corpus: &Corpus) -> Result<ModelConfig> {
    let mut c = model.clone();
    let sizes = corpus.vocab().sizes();
    if c.vocab_sizes.is_empty() {
        c.vocab_sizes = sizes;
    } else if c.vocab_sizes != sizes {
        return Err(Error::Config(format!(
            "model vocab_sizes {:?} differ from the corpus {:?}",
            c.vocab_sizes, sizes
        )));
    }
    if c.embedding_dim != corpus.answer_table.dim {
        return Err(Error::Config(format!(
            "model embedding_dim {} differs from the corpus embeddings ({})",
            c.embedding_dim, corpus.answer_table.dim
        )));
    }
    c.validate()?;
    Ok(c)
}

/// Train from `split`, keeping the parameters with the lowest validation
/// loss. `on_epoch` sees each history row as it is produced.
pub fn train_with(
    split: &DatasetSplit,
    corpus: &Corpus,
    config: &TrainConfig,
    model_config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory)> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::EmptyInput("training needs non-empty train and validation sets".into()));
    }
    let model_config = resolve_model_config(model_config, corpus)?;
    let train_ex = corpus.examples(&split.train)?;
    let val_ex = corpus.examples(&split.validation)?;
    let mut params = model::init_params(&model_config, &corpus.answer_table, model_config.seed)?;
    let mask = params.trainable_mask();
    let mut opt = AdamW::new(config.hyper(), &params.shapes());
    let lambda = config.lambda_contrastive;
    let hash = config_hash(&model_config, config);

    let batch = config.batch_size_for(&model_config);
    let per_epoch = train_ex.len().div_ceil(batch);
    let total_steps = per_epoch * config.epochs;
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let use_dropout = model_config.dropout > 0.0;

    let mut shuffle_rng = SeededRng::derived(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut lr = config.lr_max;
        for idx in order.chunks(batch) {
            let refs: Vec<&Example> = idx.iter().map(|&i| &train_ex[i]).collect();
            let fail = |message: String| Error::TrainingFailure {
                epoch,
                step,
                message,
            };
            let dropout_seed = use_dropout.then(|| config.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (loss, mut grads) = batch_gradients(
                &params,
                &refs,
                lambda,
                refs.len() as f64,
                config.threads,
                pool.as_ref(),
                dropout_seed,
            )
            .map_err(|e| match e {
                Error::Numeric(m) => fail(m),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(fail(format!("loss became {loss}")));
            }
            clip_gradients(&mut grads, config.clip_norm).map_err(|e| fail(e.to_string()))?;
            debug_assert!(
                grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt() <= config.clip_norm + 1e-9
            );
            lr = cosine_anneal_lr(step, total_steps, config.lr_max, config.lr_min)?;
            opt.step(params.tensors_mut(), &grads, lr, &mask);
            if params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(fail("parameters became non-finite".into()));
            }
            epoch_loss += loss * refs.len() as f64;
            step += 1;
        }
        let (val_loss, val_f1) = validation_metrics(&params, &val_ex, lambda).map_err(|e| {
            Error::TrainingFailure {
                epoch,
                step,
                message: format!("validation: {e}"),
            }
        })?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_ex.len() as f64,
            val_loss,
            val_macro_f1: val_f1,
            lr,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().map_or(true, |b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                params: params.clone(),
                epoch,
                val_loss,
                val_macro_f1: val_f1,
                config_hash: hash.clone(),
            });
        }
    }
    Ok((best.expect("at least one epoch"), history))
}

pub fn train(
    split: &DatasetSplit,
    corpus: &Corpus,
    config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    train_with(split, corpus, config, model_config, |_| {})
}
