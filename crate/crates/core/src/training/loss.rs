use crate::error::{Error, Result};
use crate::model::{forward, Example, ForwardOptions, ForwardPass, OpinionXfParams};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::ops;

/// Sum over questions of softmax cross-entropy, averaged over the batch.
/// `logits[i][q]` holds the logits of head `q` for example `i`.
pub fn cross_entropy_total(logits: &[Vec<Vec<f64>>], targets: &[Vec<usize>]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if logits.len() != targets.len() {
        return Err(Error::Schema(format!(
            "{} logit rows for {} target rows",
            logits.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (heads, ts) in logits.iter().zip(targets) {
        if heads.len() != ts.len() {
            return Err(Error::Schema("head count differs from target count".into()));
        }
        for (q, (row, &t)) in heads.iter().zip(ts).enumerate() {
            if t >= row.len() {
                return Err(Error::Encoding {
                    question: q,
                    id: t,
                    size: row.len(),
                });
            }
            total += ops::log_sum_exp(row) - row[t];
        }
    }
    Ok(total / logits.len() as f64)
}

/// `1 - cos(u, v)`; a zero vector has cosine 0.
pub fn cosine_alignment_loss(u: &[f64], v: &[f64]) -> f64 {
    1.0 - ops::cosine(u, v)
}

/// Whether the alignment term participates for this model.
pub fn alignment_active(params: &OpinionXfParams, lambda: f64) -> bool {
    let c = params.config();
    c.use_contrastive && c.use_fusion && lambda != 0.0
}

/// Loss node for `pass` over `examples`: summed CE plus `lambda` times the
/// summed alignment loss, both divided by `denominator`.
pub fn loss_on_graph(
    graph: &mut Graph,
    params: &OpinionXfParams,
    pass: &ForwardPass,
    examples: &[&Example],
    lambda: f64,
    denominator: f64,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (q, &logits) in pass.logits.iter().enumerate() {
        let targets = examples
            .iter()
            .map(|e| {
                e.post_ids.get(q).copied().ok_or_else(|| {
                    Error::Schema("example is missing post-exposure answers".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ce = graph.cross_entropy(logits, targets)?;
        total = Some(match total {
            Some(t) => graph.add(t, ce),
            None => ce,
        });
    }
    let mut total = total.ok_or_else(|| Error::EmptyInput("model has no heads".into()))?;
    if alignment_active(params, lambda) {
        if let Some((u, v)) = pass.summaries {
            let align = graph.cosine_loss(u, v);
            let align = graph.scale(align, lambda);
            total = graph.add(total, align);
        }
    }
    Ok(graph.scale(total, 1.0 / denominator))
}

/// `cross_entropy_total + lambda * mean alignment loss`, without dropout.
pub fn total_loss(params: &OpinionXfParams, examples: &[&Example], lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let pass = forward(&mut g, params, examples, ForwardOptions::default())?;
    let root = loss_on_graph(&mut g, params, &pass, examples, lambda, examples.len() as f64)?;
    Ok(g.value(root).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_logits_give_tiny_loss() {
        let logits = vec![vec![vec![30.0, 0.0, 0.0], vec![0.0, 30.0]]];
        let l = cross_entropy_total(&logits, &[vec![0, 1]]).unwrap();
        assert!((0.0..=1e-6).contains(&l));
    }

    #[test]
    fn uniform_logits() {
        let logits = vec![vec![vec![0.0; 4], vec![0.0; 4]]; 3];
        let l = cross_entropy_total(&logits, &[vec![0, 3], vec![1, 2], vec![2, 0]]).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_target() {
        let logits = vec![vec![vec![0.0; 2]]];
        assert!(matches!(
            cross_entropy_total(&logits, &[vec![2]]),
            Err(Error::Encoding { .. })
        ));
    }

    #[test]
    fn alignment_values() {
        assert!(cosine_alignment_loss(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-15);
        assert!((cosine_alignment_loss(&[1.0, 2.0], &[-1.0, -2.0]) - 2.0).abs() < 1e-15);
        let want = 1.0 - 1.0 / 2f64.sqrt();
        assert!((cosine_alignment_loss(&[1.0, 0.0], &[1.0, 1.0]) - want).abs() < 1e-12);
        assert_eq!(cosine_alignment_loss(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
    }
}
