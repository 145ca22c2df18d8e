//! Reference systems: modal answer, one-hot logistic regression, and a
//! mean-pooled embedding MLP.

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::embeddings::AnswerEmbeddingTable;
use crate::error::{Error, Result};
use crate::model::Example;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::{ops, Tensor};
use crate::rng::SeededRng;
use crate::training::{clip_gradients, cosine_anneal_lr, AdamW, TrainConfig};

fn check_train(train: &[Example], sizes: &[usize]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput("baseline needs training examples".into()));
    }
    for e in train {
        if e.pre_ids.len() != sizes.len() || e.post_ids.len() != sizes.len() {
            return Err(Error::Schema("example width differs from vocabulary".into()));
        }
        for (q, (&a, &b)) in e.pre_ids.iter().zip(&e.post_ids).enumerate() {
            if a >= sizes[q] || b >= sizes[q] {
                return Err(Error::Encoding {
                    question: q,
                    id: a.max(b),
                    size: sizes[q],
                });
            }
        }
    }
    Ok(())
}

/// Predicts each question's most frequent training post answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajorityModel {
    pub modal: Vec<usize>,
}

impl MajorityModel {
    /// Ties go to the lowest id, which is the lexicographically smallest
    /// answer because vocabularies are sorted.
    pub fn fit(train: &[Example], sizes: &[usize]) -> Result<Self> {
        check_train(train, sizes)?;
        let modal = sizes
            .iter()
            .enumerate()
            .map(|(q, &v)| {
                let mut counts = vec![0usize; v];
                for e in train {
                    counts[e.post_ids[q]] += 1;
                }
                let best = *counts.iter().max().expect("non-empty vocabulary");
                counts.iter().position(|&c| c == best).expect("max exists")
            })
            .collect();
        Ok(Self { modal })
    }
}

impl Predictor for MajorityModel {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
        Ok(vec![self.modal.clone(); examples.len()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegFit {
    pub iterations: usize,
    pub converged: bool,
    /// Mean cross-entropy summed over questions, one entry per iteration.
    pub losses: Vec<f64>,
}

/// Per question, multinomial logistic regression on the concatenated
/// one-hot encoding of every pre answer plus a bias column.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    pub sizes: Vec<usize>,
    pub weights: Vec<Tensor>,
}

pub const LOGREG_MAX_ITER: usize = 2000;
pub const LOGREG_TOLERANCE: f64 = 1e-5;

impl LogRegModel {
    pub fn features(sizes: &[usize], examples: &[Example]) -> Tensor {
        let width = sizes.iter().sum::<usize>() + 1;
        let mut x = Tensor::zeros(examples.len(), width);
        for (i, e) in examples.iter().enumerate() {
            let row = x.row_mut(i);
            let mut offset = 0;
            for (q, &a) in e.pre_ids.iter().enumerate() {
                row[offset + a] = 1.0;
                offset += sizes[q];
            }
            row[width - 1] = 1.0;
        }
        x
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let width = sizes.iter().sum::<usize>() + 1;
        Self {
            sizes: sizes.to_vec(),
            weights: sizes.iter().map(|&v| Tensor::zeros(width, v)).collect(),
        }
    }

    /// Full-batch gradient descent from zero with step `1/L`, where `L`
    /// bounds the curvature of the mean cross-entropy for these features.
    /// Stops when every gradient entry is below `tol` or after `max_iter`.
    pub fn fit(train: &[Example], sizes: &[usize], max_iter: usize, tol: f64) -> Result<(Self, LogRegFit)> {
        check_train(train, sizes)?;
        let x = Self::features(sizes, train);
        let xt = x.transpose();
        let n = train.len() as f64;
        let step = 2.0 / (sizes.len() + 1) as f64;
        let mut model = Self::zeros(sizes);
        let mut losses = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            let mut loss = 0.0;
            let mut max_grad: f64 = 0.0;
            for (q, w) in model.weights.iter_mut().enumerate() {
                let logits = x.matmul(w);
                let mut diff = Tensor::zeros(train.len(), sizes[q]);
                for (i, e) in train.iter().enumerate() {
                    let row = logits.row(i);
                    loss += ops::log_sum_exp(row) - row[e.post_ids[q]];
                    let d = diff.row_mut(i);
                    d.copy_from_slice(&ops::softmax(row));
                    d[e.post_ids[q]] -= 1.0;
                }
                let mut grad = xt.matmul(&diff);
                grad.scale_assign(1.0 / n);
                max_grad = grad.data().iter().fold(max_grad, |m, g| m.max(g.abs()));
                grad.scale_assign(-step);
                w.add_assign(&grad);
            }
            losses.push(loss / n);
            if max_grad < tol {
                converged = true;
                break;
            }
        }
        Ok((
            model,
            LogRegFit {
                iterations,
                converged,
                losses,
            },
        ))
    }
}

impl Predictor for LogRegModel {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
        let x = Self::features(&self.sizes, examples);
        let logits: Vec<Tensor> = self.weights.iter().map(|w| x.matmul(w)).collect();
        Ok((0..examples.len())
            .map(|i| logits.iter().map(|l| ops::argmax(l.row(i))).collect())
            .collect())
    }
}

/// Mean of the pre answers' embedding rows concatenated with the deck
/// vector, one GELU hidden layer, one linear head per question.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoolMlp {
    pub table: AnswerEmbeddingTable,
    /// `w1, b1`, then `w, b` per head.
    pub tensors: Vec<Tensor>,
}

impl MeanPoolMlp {
    pub fn init(table: &AnswerEmbeddingTable, hidden: usize, seed: u64) -> Self {
        let input = 2 * table.dim;
        let mut rng = SeededRng::derived(seed, "meanpool");
        let mut uniform = |r: usize, c: usize, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(r, c, |_, _| rng.uniform_in(-b, b))
        };
        let mut tensors = vec![uniform(input, hidden, input), uniform(1, hidden, input)];
        for rows in &table.rows {
            tensors.push(uniform(hidden, rows.len(), hidden));
            tensors.push(uniform(1, rows.len(), hidden));
        }
        Self {
            table: table.clone(),
            tensors,
        }
    }

    pub fn features(&self, examples: &[&Example]) -> Result<Tensor> {
        let e = self.table.dim;
        let mut x = Tensor::zeros(examples.len(), 2 * e);
        for (i, ex) in examples.iter().enumerate() {
            if ex.deck.len() != e || ex.pre_ids.len() != self.table.rows.len() {
                return Err(Error::Schema("example does not match the embedding table".into()));
            }
            let row = x.row_mut(i);
            for (q, &a) in ex.pre_ids.iter().enumerate() {
                let v = self.table.rows[q].get(a).ok_or(Error::Encoding {
                    question: q,
                    id: a,
                    size: self.table.rows[q].len(),
                })?;
                for (r, x) in row[..e].iter_mut().zip(v) {
                    *r += x / ex.pre_ids.len() as f64;
                }
            }
            row[e..].copy_from_slice(&ex.deck);
        }
        Ok(x)
    }

    fn logits(&self, g: &mut Graph, examples: &[&Example]) -> Result<(Vec<Var>, Vec<Var>)> {
        let pv: Vec<Var> = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(i, t.clone()))
            .collect();
        let x = g.input(self.features(examples)?);
        let h = g.linear(x, pv[0], pv[1]);
        let h = g.gelu(h);
        let heads = (0..self.table.rows.len())
            .map(|q| g.linear(h, pv[2 + 2 * q], pv[3 + 2 * q]))
            .collect();
        Ok((heads, pv))
    }

    /// Summed cross-entropy over questions and examples, divided by `denom`.
    fn loss(&self, g: &mut Graph, examples: &[&Example], denom: f64) -> Result<Var> {
        let (heads, _) = self.logits(g, examples)?;
        let mut total: Option<Var> = None;
        for (q, &l) in heads.iter().enumerate() {
            let ce = g.cross_entropy(l, examples.iter().map(|e| e.post_ids[q]).collect())?;
            total = Some(match total {
                Some(t) => g.add(t, ce),
                None => ce,
            });
        }
        let total = total.ok_or_else(|| Error::EmptyInput("no questions".into()))?;
        Ok(g.scale(total, 1.0 / denom))
    }

    pub fn mean_loss(&self, examples: &[Example]) -> Result<f64> {
        let refs: Vec<&Example> = examples.iter().collect();
        let mut g = Graph::new();
        let root = self.loss(&mut g, &refs, refs.len() as f64)?;
        Ok(g.value(root).item())
    }

    /// AdamW with cosine annealing and clipping as in the main training
    /// loop; keeps the epoch with the lowest validation loss.
    pub fn fit(
        train: &[Example],
        validation: &[Example],
        table: &AnswerEmbeddingTable,
        hidden: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = table.rows.iter().map(Vec::len).collect();
        check_train(train, &sizes)?;
        if validation.is_empty() {
            return Err(Error::EmptyInput("baseline needs validation examples".into()));
        }
        let mut model = Self::init(table, hidden, config.seed);
        let shapes: Vec<[usize; 2]> = model.tensors.iter().map(Tensor::shape).collect();
        let mut opt = AdamW::new(config.hyper(), &shapes);
        let mask = vec![true; shapes.len()];
        let batch = config.batch_size.unwrap_or(64);
        let total = train.len().div_ceil(batch) * config.epochs;
        let mut rng = SeededRng::derived(config.seed, "meanpool-shuffle");
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best: Option<(f64, Vec<Tensor>)> = None;
        let mut step = 0;
        for epoch in 1..=config.epochs {
            rng.shuffle(&mut order);
            for idx in order.chunks(batch) {
                let refs: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
                let mut g = Graph::new();
                let root = model.loss(&mut g, &refs, refs.len() as f64)?;
                if !g.value(root).item().is_finite() {
                    return Err(Error::TrainingFailure {
                        epoch,
                        step,
                        message: "baseline loss became non-finite".into(),
                    });
                }
                let mut grads = g.backward(root).params(&g, &shapes);
                clip_gradients(&mut grads, config.clip_norm)?;
                let lr = cosine_anneal_lr(step, total, config.lr_max, config.lr_min)?;
                opt.step(&mut model.tensors, &grads, lr, &mask);
                step += 1;
            }
            let val = model.mean_loss(validation)?;
            if best.as_ref().map_or(true, |(b, _)| val < *b) {
                best = Some((val, model.tensors.clone()));
            }
        }
        model.tensors = best.expect("at least one epoch").1;
        Ok(model)
    }
}

impl Predictor for MeanPoolMlp {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
        let refs: Vec<&Example> = examples.iter().collect();
        let mut g = Graph::new();
        let (heads, _) = self.logits(&mut g, &refs)?;
        Ok((0..examples.len())
            .map(|i| heads.iter().map(|&h| ops::argmax(g.value(h).row(i))).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(pre: Vec<usize>, post: Vec<usize>) -> Example {
        Example {
            pre_ids: pre,
            post_ids: post,
            deck: vec![],
            topic: "t".into(),
        }
    }

    #[test]
    fn majority_ties_go_to_lowest_id() {
        let train = vec![ex(vec![0, 0], vec![2, 1]), ex(vec![0, 0], vec![1, 1]), ex(vec![0, 0], vec![1, 0])];
        let m = MajorityModel::fit(&train, &[3, 2]).unwrap();
        assert_eq!(m.modal, vec![1, 1]);
        let tie = MajorityModel::fit(&train[..2], &[3, 2]).unwrap();
        assert_eq!(tie.modal, vec![1, 1]);
        let tie = MajorityModel::fit(&[ex(vec![0], vec![2]), ex(vec![0], vec![0])], &[3]).unwrap();
        assert_eq!(tie.modal, vec![0]);
    }

    #[test]
    fn logreg_copies_pre_answers() {
        let mut rng = SeededRng::new(3);
        let train: Vec<Example> = (0..200)
            .map(|_| {
                let pre = vec![rng.below(3), rng.below(4)];
                ex(pre.clone(), pre)
            })
            .collect();
        let (m, fit) = LogRegModel::fit(&train, &[3, 4], 500, 1e-6).unwrap();
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let preds = m.predict_ids(&train).unwrap();
        let correct = preds.iter().zip(&train).filter(|(p, e)| **p == e.post_ids).count();
        assert!(correct as f64 / train.len() as f64 >= 0.99);
    }

    #[test]
    fn zero_logreg_predicts_first_class() {
        let m = LogRegModel::zeros(&[3]);
        assert_eq!(m.predict_ids(&[ex(vec![2], vec![2])]).unwrap(), vec![vec![0]]);
    }
}
