use std::fmt::Write as _;

use super::{baselines, EvalReport, LogRegModel, MajorityModel, MeanPoolMlp, Predictor};
use crate::corpus::Corpus;
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{self, hex_digest, Checkpoint, TrainConfig, TrainHistory};

/// Identity of a split: participant, topic, and side of every record.
pub fn split_fingerprint(split: &DatasetSplit) -> String {
    let mut s = String::new();
    for (side, records) in [("t", &split.train), ("v", &split.validation)] {
        for r in records {
            let _ = writeln!(s, "{side}\t{}\t{}", r.participant_id, r.topic);
        }
    }
    hex_digest(s.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemResult {
    pub name: String,
    pub split_fingerprint: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
}

impl ComparisonRow {
    /// Scores are kept at the three decimals the table prints.
    pub fn new(model: impl Into<String>, accuracy: f64, f1: f64) -> Self {
        let r = |x: f64| (x * 1000.0).round() / 1000.0;
        Self {
            model: model.into(),
            accuracy: r(accuracy),
            f1: r(f1),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub const HEADER: &'static str = "model,accuracy,f1";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.3},{:.3}", r.model, r.accuracy, r.f1);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Format(format!("comparison header: {e}")))?;
        if header.iter().collect::<Vec<_>>() != ["model", "accuracy", "f1"] {
            return Err(Error::Format(format!("unexpected comparison header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("comparison row {}: {e}", i + 1)))?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("comparison row {} column {j}", i + 1)))
            };
            rows.push(ComparisonRow::new(rec.get(0).unwrap_or_default(), num(1)?, num(2)?));
        }
        Ok(Self { rows })
    }

    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// One row per result; every result must come from the same split.
pub fn compare(results: &[SystemResult]) -> Result<ComparisonTable> {
    let Some(first) = results.first() else {
        return Err(Error::Comparison("no systems to compare".into()));
    };
    if let Some(r) = results.iter().find(|r| r.split_fingerprint != first.split_fingerprint) {
        return Err(Error::Comparison(format!(
            "{} was evaluated on a different split than {}",
            r.name, first.name
        )));
    }
    Ok(ComparisonTable {
        rows: results
            .iter()
            .map(|r| ComparisonRow::new(&r.name, r.report.micro_accuracy, r.report.macro_f1))
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    Fusion,
    Quantum,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Fusion, Variant::Quantum];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Fusion => "fusion",
            Variant::Quantum => "quantum",
        }
    }
}

/// The quantum variant reads its angles from the fused token, so it
/// carries fusion and the alignment loss as well.
pub fn variant_config(model: &ModelConfig, variant: Variant) -> ModelConfig {
    let (fusion, quantum) = match variant {
        Variant::Base => (false, false),
        Variant::Fusion => (true, false),
        Variant::Quantum => (true, true),
    };
    ModelConfig {
        use_fusion: fusion,
        use_quantum: quantum,
        use_contrastive: fusion,
        ..model.clone()
    }
}

pub struct ComparisonOutcome {
    pub table: ComparisonTable,
    pub results: Vec<SystemResult>,
    pub checkpoints: Vec<(Variant, Checkpoint, TrainHistory)>,
    pub majority: MajorityModel,
    pub logreg_converged: bool,
}

/// Train the three model variants and the three baselines on `split` and
/// evaluate each on its validation part.
pub fn run_comparison(
    split: &DatasetSplit,
    corpus: &Corpus,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
    mut log: impl FnMut(&str),
) -> Result<ComparisonOutcome> {
    let fp = split_fingerprint(split);
    let train_ex = corpus.examples(&split.train)?;
    let eval_ex = corpus.examples(&split.validation)?;
    let sizes = corpus.vocab().sizes();
    let mut results = Vec::new();
    let mut checkpoints = Vec::new();
    let mut push = |name: &str, report: EvalReport, log: &mut dyn FnMut(&str)| {
        log(&format!(
            "{name}: accuracy {:.3}, macro-F1 {:.3}",
            report.micro_accuracy, report.macro_f1
        ));
        results.push(SystemResult {
            name: name.to_string(),
            split_fingerprint: fp.clone(),
            report,
        });
    };

    for v in Variant::ALL {
        let cfg = variant_config(model_config, v);
        let (ck, history) = training::train(split, corpus, train_config, &cfg)?;
        let report = ck.params.evaluate(&eval_ex)?;
        push(v.name(), report, &mut log);
        checkpoints.push((v, ck, history));
    }

    let majority = MajorityModel::fit(&train_ex, &sizes)?;
    push("majority", majority.evaluate(&eval_ex)?, &mut log);

    let (lr, fit) = LogRegModel::fit(
        &train_ex,
        &sizes,
        baselines::LOGREG_MAX_ITER,
        baselines::LOGREG_TOLERANCE,
    )?;
    if !fit.converged {
        log(&format!(
            "warning: logistic regression stopped at the {}-iteration cap",
            fit.iterations
        ));
    }
    push("logreg", lr.evaluate(&eval_ex)?, &mut log);

    let mlp = MeanPoolMlp::fit(
        &train_ex,
        &eval_ex,
        &corpus.answer_table,
        model_config.d_model,
        train_config,
    )?;
    push("meanpool_mlp", mlp.evaluate(&eval_ex)?, &mut log);

    Ok(ComparisonOutcome {
        table: compare(&results)?,
        results,
        checkpoints,
        majority,
        logreg_converged: fit.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(acc: f64, f1: f64) -> EvalReport {
        EvalReport {
            macro_f1: f1,
            micro_accuracy: acc,
            per_question_f1: vec![f1],
            per_topic: BTreeMap::new(),
            n_eval: 1,
        }
    }

    fn result(name: &str, fp: &str, acc: f64, f1: f64) -> SystemResult {
        SystemResult {
            name: name.into(),
            split_fingerprint: fp.into(),
            report: report(acc, f1),
        }
    }

    #[test]
    fn csv_layout_fixture() {
        let t = compare(&[
            result("base", "s", 0.7, 0.65),
            result("with fusion", "s", 0.7, 0.705),
            result("quantum", "s", 0.81, 0.8),
        ])
        .unwrap();
        assert_eq!(
            t.to_csv(),
            "model,accuracy,f1\nbase,0.700,0.650\nwith fusion,0.700,0.705\nquantum,0.810,0.800\n"
        );
        assert_eq!(ComparisonTable::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn rounding_and_round_trip() {
        let t = compare(&[result("a", "s", 2.0 / 3.0, 0.12345)]).unwrap();
        assert_eq!(t.to_csv(), "model,accuracy,f1\na,0.667,0.123\n");
        assert_eq!(ComparisonTable::from_csv(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn split_mismatch_is_rejected() {
        let err = compare(&[result("a", "s1", 0.5, 0.5), result("b", "s2", 0.5, 0.5)]);
        assert!(matches!(err, Err(Error::Comparison(_))));
        assert!(matches!(compare(&[]), Err(Error::Comparison(_))));
    }

    #[test]
    fn variants() {
        let m = ModelConfig::default();
        let q = variant_config(&m, Variant::Quantum);
        assert!(q.use_fusion && q.use_quantum && q.use_contrastive);
        let b = variant_config(&q, Variant::Base);
        assert!(!b.use_fusion && !b.use_quantum && !b.use_contrastive);
    }
}
