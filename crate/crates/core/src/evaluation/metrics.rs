//! Classification metrics over `(question, class)` cells.
//!
//! Macro-F1 convention: within each question, F1 is computed for every
//! class that occurs among the gold labels or the predictions of that
//! question (a class with no predictions has precision 0; a class with no
//! gold instances has recall 0; F1 is 0 when precision + recall is 0) and
//! averaged; the overall score is the mean of those per-question values.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// `(question index, class id)`.
pub type Cell = (usize, usize);

fn check(preds: &[Cell], targets: &[Cell]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no cells to score".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::Schema(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if let Some(i) = preds.iter().zip(targets).position(|(p, t)| p.0 != t.0) {
        return Err(Error::Schema(format!("cell {i} pairs different questions")));
    }
    Ok(())
}

fn class_macro_f1<'a>(pairs: impl Iterator<Item = (&'a usize, &'a usize)> + Clone) -> f64 {
    let labels: BTreeSet<usize> = pairs.clone().flat_map(|(p, t)| [*p, *t]).collect();
    let total: f64 = labels
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&p, &t) in pairs.clone() {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    total / labels.len() as f64
}

/// Class-macro F1 per question, in ascending question order.
pub fn per_question_f1(preds: &[Cell], targets: &[Cell]) -> Result<Vec<f64>> {
    check(preds, targets)?;
    let mut by_q: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (p, t) in preds.iter().zip(targets) {
        let e = by_q.entry(p.0).or_default();
        e.0.push(p.1);
        e.1.push(t.1);
    }
    let expected = by_q.keys().next_back().map_or(0, |q| q + 1);
    if by_q.len() != expected {
        return Err(Error::Schema("some questions have no cells".into()));
    }
    Ok(by_q
        .values()
        .map(|(p, t)| class_macro_f1(p.iter().zip(t.iter())))
        .collect())
}

pub fn macro_f1(preds: &[Cell], targets: &[Cell]) -> Result<f64> {
    let per_q = per_question_f1(preds, targets)?;
    Ok(per_q.iter().sum::<f64>() / per_q.len() as f64)
}

pub fn micro_accuracy(preds: &[Cell], targets: &[Cell]) -> Result<f64> {
    check(preds, targets)?;
    let correct = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Flatten per-record answer lists into cells.
pub fn cells(rows: &[Vec<usize>]) -> Vec<Cell> {
    rows.iter()
        .flat_map(|r| r.iter().copied().enumerate())
        .collect()
}
