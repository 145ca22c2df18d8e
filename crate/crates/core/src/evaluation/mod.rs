//! Metrics, baselines, and the model comparison table.

pub mod baselines;
mod compare;
pub mod metrics;
mod report;

pub use baselines::{LogRegFit, LogRegModel, MajorityModel, MeanPoolMlp};
pub use compare::{
    compare, run_comparison, split_fingerprint, variant_config, ComparisonOutcome,
    ComparisonRow, ComparisonTable, SystemResult, Variant,
};
pub use metrics::{macro_f1, micro_accuracy, per_question_f1, Cell};
pub use report::{evaluate, EvalReport, TopicMetrics};

use crate::error::Result;
use crate::model::{predict_batch, Example, OpinionXfParams};
use crate::numerics::ops;

/// Anything that maps examples to predicted answer ids.
pub trait Predictor {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>>;

    fn evaluate(&self, examples: &[Example]) -> Result<EvalReport> {
        evaluate(examples, &self.predict_ids(examples)?)
    }
}

const PREDICT_BATCH: usize = 256;

impl Predictor for OpinionXfParams {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(PREDICT_BATCH) {
            let refs: Vec<&Example> = chunk.iter().collect();
            for heads in predict_batch(self, &refs)? {
                out.push(heads.iter().map(|l| ops::argmax(l)).collect());
            }
        }
        Ok(out)
    }
}

pub fn baseline_majority(train: &[Example], eval: &[Example], sizes: &[usize]) -> Result<EvalReport> {
    MajorityModel::fit(train, sizes)?.evaluate(eval)
}

/// Report plus fit diagnostics; a fit that hit the iteration cap is
/// reported anyway with `converged = false`.
pub fn baseline_logreg(
    train: &[Example],
    eval: &[Example],
    sizes: &[usize],
) -> Result<(EvalReport, LogRegFit)> {
    let (m, fit) = LogRegModel::fit(
        train,
        sizes,
        baselines::LOGREG_MAX_ITER,
        baselines::LOGREG_TOLERANCE,
    )?;
    Ok((m.evaluate(eval)?, fit))
}

pub fn baseline_meanpool_mlp(
    train: &[Example],
    eval: &[Example],
    table: &crate::embeddings::AnswerEmbeddingTable,
    hidden: usize,
    config: &crate::training::TrainConfig,
) -> Result<EvalReport> {
    MeanPoolMlp::fit(train, eval, table, hidden, config)?.evaluate(eval)
}
