use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{self, Cell};
use crate::error::{Error, Result};
use crate::model::Example;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    /// Among cells whose gold post answer differs from the pre answer, the
    /// fraction predicted exactly.
    pub shift_agreement: f64,
    /// Fraction of cells whose gold post answer differs from the pre answer.
    pub shift_rate: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    pub per_question_f1: Vec<f64>,
    pub per_topic: BTreeMap<String, TopicMetrics>,
    pub n_eval: usize,
}

fn topic_metrics(examples: &[&Example], preds: &[&Vec<usize>]) -> Result<TopicMetrics> {
    let p: Vec<Cell> = preds.iter().flat_map(|r| r.iter().copied().enumerate()).collect();
    let t: Vec<Cell> = examples
        .iter()
        .flat_map(|e| e.post_ids.iter().copied().enumerate())
        .collect();
    let (mut shifted, mut agreed) = (0usize, 0usize);
    for (e, pr) in examples.iter().zip(preds) {
        for q in 0..e.post_ids.len() {
            if e.post_ids[q] != e.pre_ids[q] {
                shifted += 1;
                agreed += usize::from(pr[q] == e.post_ids[q]);
            }
        }
    }
    Ok(TopicMetrics {
        macro_f1: metrics::macro_f1(&p, &t)?,
        micro_accuracy: metrics::micro_accuracy(&p, &t)?,
        shift_agreement: if shifted == 0 { 0.0 } else { agreed as f64 / shifted as f64 },
        shift_rate: shifted as f64 / t.len() as f64,
        n: examples.len(),
    })
}

/// Score `preds` (answer ids per question, one row per example) against the
/// examples' post-exposure answers.
pub fn evaluate(examples: &[Example], preds: &[Vec<usize>]) -> Result<EvalReport> {
    if examples.len() != preds.len() {
        return Err(Error::Schema(format!(
            "{} predictions for {} examples",
            preds.len(),
            examples.len()
        )));
    }
    if examples.iter().zip(preds).any(|(e, p)| e.post_ids.len() != p.len()) {
        return Err(Error::Schema("prediction width differs from question count".into()));
    }
    let gold: Vec<Vec<usize>> = examples.iter().map(|e| e.post_ids.clone()).collect();
    let (p, t) = (metrics::cells(preds), metrics::cells(&gold));
    let mut groups: BTreeMap<&str, (Vec<&Example>, Vec<&Vec<usize>>)> = BTreeMap::new();
    for (e, pr) in examples.iter().zip(preds) {
        let g = groups.entry(e.topic.as_str()).or_default();
        g.0.push(e);
        g.1.push(pr);
    }
    let per_topic = groups
        .into_iter()
        .map(|(topic, (ex, pr))| Ok((topic.to_string(), topic_metrics(&ex, &pr)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        macro_f1: metrics::macro_f1(&p, &t)?,
        micro_accuracy: metrics::micro_accuracy(&p, &t)?,
        per_question_f1: metrics::per_question_f1(&p, &t)?,
        per_topic,
        n_eval: examples.len(),
    })
}

impl EvalReport {
    /// `metric,value` rows: overall scores, then one F1 per question.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "macro_f1,{}", self.macro_f1);
        let _ = writeln!(out, "micro_accuracy,{}", self.micro_accuracy);
        let _ = writeln!(out, "n_eval,{}", self.n_eval);
        for (q, f) in self.per_question_f1.iter().enumerate() {
            let _ = writeln!(out, "f1_q{q},{f}");
        }
        out
    }

    pub fn topics_csv(&self) -> String {
        let mut out = String::from("topic,macro_f1,micro_accuracy,shift_agreement,shift_rate,n\n");
        for (topic, m) in &self.per_topic {
            let _ = writeln!(
                out,
                "{topic},{},{},{},{},{}",
                m.macro_f1, m.micro_accuracy, m.shift_agreement, m.shift_rate, m.n
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(topic: &str, pre: Vec<usize>, post: Vec<usize>) -> Example {
        Example {
            pre_ids: pre,
            post_ids: post,
            deck: vec![],
            topic: topic.into(),
        }
    }

    #[test]
    fn per_topic_shift_numbers() {
        let examples = vec![
            ex("a", vec![0, 0], vec![1, 0]),
            ex("a", vec![1, 1], vec![1, 0]),
            ex("b", vec![0, 1], vec![0, 1]),
        ];
        let preds = vec![vec![1, 0], vec![1, 1], vec![0, 1]];
        let r = evaluate(&examples, &preds).unwrap();
        assert_eq!(r.n_eval, 3);
        let a = &r.per_topic["a"];
        assert_eq!(a.shift_rate, 0.5);
        assert_eq!(a.shift_agreement, 0.5);
        assert_eq!(r.per_topic["b"].shift_rate, 0.0);
        assert_eq!(r.per_topic["b"].micro_accuracy, 1.0);
        assert!((r.micro_accuracy - 5.0 / 6.0).abs() < 1e-15);
        assert!(r.to_csv().starts_with("metric,value\nmacro_f1,"));
        assert_eq!(r.topics_csv().lines().count(), 3);
    }

    #[test]
    fn mismatched_predictions() {
        let examples = vec![ex("a", vec![0], vec![0])];
        assert!(evaluate(&examples, &[]).is_err());
        assert!(evaluate(&examples, &[vec![0, 1]]).is_err());
    }
}
