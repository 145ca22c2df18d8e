//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary
//! (`harness = false`) and exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use opinionxf::cli::{cmd_compare, cmd_datagen, cmd_train, COMPARISON_FILE, HISTORY_FILE};
use opinionxf::config::RunConfig;
use opinionxf::corpus::Corpus;
use opinionxf::dataset::{
    generate_synthetic, synthetic_decks, BayesOracle, DatasetSplit, GeneratorConfig, PerQuestion,
    TopicSpec,
};
use opinionxf::error::Result;
use opinionxf::evaluation::{evaluate, variant_config, ComparisonTable, Predictor, Variant};
use opinionxf::model::ModelConfig;
use opinionxf::training::{train, TrainConfig};
use opinionxf::verify;

/// Epochs for the trained-model comparison on the default corpus.
const COMPARE_EPOCHS: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn report(n: usize, title: &str, r: Result<Outcome>, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} criterion {n:>2} {title}: {detail} [{secs:.1}s]",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn quantum_grid() -> Result<Outcome> {
    let t = Instant::now();
    let err = verify::quantum_grid_error(21);
    let secs = t.elapsed().as_secs_f64();
    outcome(err <= 1e-12 && secs < 1.0, format!("max error {err:.2e}, {secs:.4}s"))
}

fn fft_oracle() -> Result<Outcome> {
    let e = verify::fft_oracle_errors(&[4, 8, 16, 128], 100, 2024)?;
    outcome(
        e.vs_dft <= 1e-10 && e.round_trip <= 1e-9 && e.parseval <= 1e-9,
        format!("vs dft {:.2e}, round trip {:.2e}, parseval {:.2e}", e.vs_dft, e.round_trip, e.parseval),
    )
}

fn gradient_checks() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut tensors = 0;
    let mut pass = true;
    for (fusion, quantum) in [(false, false), (true, false), (true, true)] {
        let r = verify::model_grad_check(fusion, quantum, 0.1)?;
        pass &= r.pass;
        worst = worst.max(r.max_error());
        tensors += r.per_param.len();
    }
    let leak = verify::quantum_angle_gradient_leak()?;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        pass && leak == 0.0 && secs < 120.0,
        format!("max rel error {worst:.2e} over {tensors} tensors, quantum angle leak {leak:e}"),
    )
}

fn fusion_identity() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (d, k, seed) in [(16, 4, 1), (32, 8, 2), (64, 16, 3)] {
        worst = worst.max(verify::fusion_identity_error(d, k, seed)?);
    }
    outcome(worst <= 1e-9, format!("max change {worst:.2e}"))
}

fn overfit() -> Result<Outcome> {
    let gen = GeneratorConfig::default();
    let records = generate_synthetic(&gen)?;
    let corpus = Corpus::build(&records, synthetic_decks(&gen), None, gen.embedding_dim)?;
    let batch = records[..16].to_vec();
    let split = DatasetSplit {
        train: batch.clone(),
        validation: batch,
        seed: 0,
    };
    // One optimizer step per epoch: the batch fits in a single minibatch.
    let cfg = TrainConfig {
        epochs: 300,
        lambda_contrastive: 0.0,
        ..TrainConfig::default()
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let mc = variant_config(&ModelConfig::default(), v);
        let (_, history) = train(&split, &corpus, &cfg, &mc)?;
        let finite = history
            .epochs
            .iter()
            .all(|e| e.train_loss.is_finite() && e.val_loss.is_finite());
        let reached = history.epochs.iter().position(|e| e.val_loss < 0.05).map(|i| i + 1);
        pass &= finite && (v != Variant::Base || reached.is_some());
        parts.push(format!(
            "{} CE<0.05 at step {} finite {finite}",
            v.name(),
            reached.map_or("never".into(), |s| s.to_string())
        ));
    }
    outcome(pass, parts.join(", "))
}

fn report_f1(dir: &Path, name: &str) -> Result<f64> {
    let text = std::fs::read_to_string(dir.join(format!("eval_{name}.csv")))
        .map_err(|e| opinionxf::Error::io(dir, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("macro_f1,"))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| opinionxf::Error::Format(format!("no macro_f1 in eval_{name}.csv")))
}

struct CompareRun {
    secs: f64,
    bayes_f1: f64,
    table: ComparisonTable,
    written: String,
    f1: Vec<(Variant, f64)>,
    majority_f1: f64,
}

fn run_compare(dir: &Path) -> Result<CompareRun> {
    let t = Instant::now();
    let mut config = RunConfig::default();
    config.training.epochs = COMPARE_EPOCHS;
    let table = cmd_compare(&config, dir, |m| eprintln!("  {m}"))?;
    let secs = t.elapsed().as_secs_f64();

    let prep = config.prepare()?;
    let oracle = BayesOracle::new(&config.generator)?;
    let vocab = prep.corpus.vocab();
    let preds = prep
        .split
        .validation
        .iter()
        .map(|r| {
            oracle
                .predict_record(r)?
                .iter()
                .enumerate()
                .map(|(q, label)| vocab.id(q, label))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let examples = prep.corpus.examples(&prep.split.validation)?;
    let bayes_f1 = evaluate(&examples, &preds)?.macro_f1;
    let f1 = Variant::ALL
        .iter()
        .map(|&v| Ok((v, report_f1(dir, v.name())?)))
        .collect::<Result<Vec<_>>>()?;
    let written = std::fs::read_to_string(dir.join(COMPARISON_FILE))
        .map_err(|e| opinionxf::Error::io(dir, e))?;
    Ok(CompareRun {
        secs,
        bayes_f1,
        table,
        written,
        f1,
        majority_f1: report_f1(dir, "majority")?,
    })
}

fn bayes_gap(run: &Result<CompareRun>) -> Result<Outcome> {
    let run = run.as_ref().map_err(|e| opinionxf::Error::Comparison(e.to_string()))?;
    let mut pass = run.secs < 15.0 * 60.0;
    let mut parts = vec![format!("bayes {:.4}, majority {:.4}", run.bayes_f1, run.majority_f1)];
    for (v, f1) in &run.f1 {
        let gap = run.bayes_f1 - f1;
        pass &= gap <= 0.05 && f1 - run.majority_f1 >= 0.05;
        parts.push(format!("{} {f1:.4} (gap {gap:.4})", v.name()));
    }
    parts.push(format!("{COMPARE_EPOCHS} epochs, {:.0}s total", run.secs));
    outcome(pass, parts.join(", "))
}

fn metric_fixtures() -> Result<Outcome> {
    use opinionxf::evaluation::metrics::macro_f1;
    let hand = macro_f1(&[(0, 0), (0, 0), (0, 1)], &[(0, 0), (0, 1), (0, 1)])?;
    let diff = verify::metric_fixture_error(50, 99)?;
    outcome(
        hand == 2.0 / 3.0 && diff <= 1e-12,
        format!("hand fixture {hand}, brute force max diff {diff:e} over 50 fixtures"),
    )
}

fn determinism(root: &Path) -> Result<Outcome> {
    let mut config = RunConfig::default();
    config.generator.n_participants = 150;
    config.model.d_model = 32;
    config.model.n_layers = 2;
    config.model.n_heads = 2;
    config.training.epochs = 3;
    let read = |p: &Path| std::fs::read(p).map_err(|e| opinionxf::Error::io(p, e));
    let (a, b) = (root.join("a"), root.join("b"));
    cmd_train(&config, &a, |_| {})?;
    cmd_train(&config, &b, |_| {})?;
    let history_same = read(&a.join(HISTORY_FILE))? == read(&b.join(HISTORY_FILE))?;
    let (c, d) = (root.join("c"), root.join("d"));
    cmd_datagen(&config, &c)?;
    cmd_datagen(&config, &d)?;
    let mut data_same = true;
    for f in ["records.jsonl", "decks.jsonl", "embeddings.tsv", "shift_rates.csv"] {
        data_same &= read(&c.join(f))? == read(&d.join(f))?;
    }
    outcome(
        history_same && data_same,
        format!("history identical {history_same}, dataset files identical {data_same}"),
    )
}

fn elasticity() -> Result<Outcome> {
    let topic = |name: &str, p: f64, c: f64| TopicSpec {
        name: name.into(),
        shift_prob: PerQuestion::All(p),
        convergence_prob: PerQuestion::All(c),
        consensus_option: 0,
    };
    let gen = GeneratorConfig {
        topics: vec![topic("sticky", 0.05, 0.0), topic("elastic", 0.45, 0.25)],
        seed: 23,
        ..GeneratorConfig::default()
    };
    let oracle = BayesOracle::new(&gen)?;
    let records = generate_synthetic(&gen)?;
    let corpus = Corpus::build(&records, synthetic_decks(&gen), None, gen.embedding_dim)?;
    let split = opinionxf::dataset::split(&records, 0.8, 23)?;
    let mc = ModelConfig {
        d_model: 64,
        n_layers: 2,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let (ck, _) = train(&split, &corpus, &cfg, &mc)?;

    // Measured rates over the whole corpus, agreement on held-out records.
    let all = corpus.examples(&records)?;
    let preds = ck.params.predict_ids(&all)?;
    let full = evaluate(&all, &preds)?;
    let held_out = ck.params.evaluate(&corpus.examples(&split.validation)?)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["sticky", "elastic"] {
        let t = oracle.topic_index(name)?;
        let q = oracle.answer_counts().len();
        let expected = (0..q).map(|i| oracle.expected_shift_rate(t, i)).sum::<f64>() / q as f64;
        let measured = full.per_topic[name].shift_rate;
        pass &= (measured - expected).abs() <= 0.03;
        parts.push(format!(
            "{name} shift {measured:.3} vs {expected:.3}, agreement {:.3}",
            held_out.per_topic[name].shift_agreement
        ));
    }
    pass &= held_out.per_topic["elastic"].shift_agreement > held_out.per_topic["sticky"].shift_agreement;
    outcome(pass, parts.join(", "))
}

fn comparison_table(run: &Result<CompareRun>) -> Result<Outcome> {
    let run = run.as_ref().map_err(|e| opinionxf::Error::Comparison(e.to_string()))?;
    let parsed = ComparisonTable::from_csv(&run.written)?;
    let mut lines = run.written.lines();
    let header_ok = lines.next() == Some("model,accuracy,f1");
    let three_decimals = lines.all(|l| {
        let cols: Vec<&str> = l.split(',').collect();
        cols.len() == 3 && cols[1..].iter().all(|c| c.split('.').nth(1).map_or(false, |d| d.len() == 3))
    });
    let names = ["base", "fusion", "quantum", "majority", "logreg", "meanpool_mlp"];
    let all_rows = names.iter().all(|n| parsed.row(n).is_some()) && parsed.rows.len() == names.len();
    outcome(
        header_ok && three_decimals && all_rows && parsed == run.table,
        format!("{} rows on one split: {}", parsed.rows.len(), run.written.trim().replace('\n', " | ")),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "quantum closed form", quantum_grid(), t);
    let t = Instant::now();
    all &= report(2, "fft oracle", fft_oracle(), t);
    let t = Instant::now();
    all &= report(3, "gradient checks", gradient_checks(), t);
    let t = Instant::now();
    all &= report(4, "fusion identity", fusion_identity(), t);
    let t = Instant::now();
    all &= report(5, "overfit 16 records", overfit(), t);
    let t = Instant::now();
    let compare_dir = scratch.path().join("compare");
    let run = run_compare(&compare_dir);
    all &= report(6, "bayes gap", bayes_gap(&run), t);
    let t = Instant::now();
    all &= report(7, "metric fixtures", metric_fixtures(), t);
    let t = Instant::now();
    all &= report(8, "determinism", determinism(&scratch.path().join("det")), t);
    let t = Instant::now();
    all &= report(9, "elasticity", elasticity(), t);
    let t = Instant::now();
    all &= report(10, "comparison table", comparison_table(&run), t);
    println!("{}", if all { "acceptance: all criteria PASS" } else { "acceptance: some criteria FAIL" });
    if !all {
        std::process::exit(1);
    }
}
