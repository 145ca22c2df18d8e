use std::path::Path;
use std::process::{Command, Output};

use opinionxf::checkpoint::CheckpointFile;
use opinionxf::evaluation::ComparisonTable;
use opinionxf::training::TrainHistory;

const SMALL: &str = r#"
[generator]
n_participants = 120
embedding_dim = 16

[model]
d_model = 16
n_layers = 1
n_heads = 2
embedding_dim = 16

[training]
epochs = 2
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opinionxf"))
        .current_dir(dir)
        .env_remove("OPINIONXF_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn datagen_train_eval_on_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.toml"), SMALL).unwrap();
    ok(&run(d, &["--config", "gen.toml", "--out", "data", "datagen"]));
    for f in ["records.jsonl", "decks.jsonl", "embeddings.tsv", "shift_rates.csv", "config.toml", "config.sha256"] {
        assert!(d.join("data").join(f).exists(), "{f} missing");
    }

    let files = format!(
        "{SMALL}\n[paths]\ndataset = \"data/records.jsonl\"\ndecks = \"data/decks.jsonl\"\nembeddings = \"data/embeddings.tsv\"\n"
    );
    std::fs::write(d.join("files.toml"), files).unwrap();
    let stdout = ok(&run(d, &["--config", "files.toml", "--out", "run", "train"]));
    assert!(stdout.contains("best epoch"));
    let history = TrainHistory::from_csv(&read(&d.join("run/history.csv"))).unwrap();
    assert_eq!(history.len(), 2);

    let stdout = ok(&run(
        d,
        &["--out", "scored", "eval", "--checkpoint", "run/checkpoint.json", "--dataset", "data/records.jsonl"],
    ));
    assert!(stdout.contains("n=120"), "{stdout}");
    assert!(read(&d.join("scored/eval.csv")).starts_with("metric,value\nmacro_f1,"));
    assert!(read(&d.join("scored/eval_topics.csv")).starts_with("topic,macro_f1,micro_accuracy,shift_agreement"));
}

#[test]
fn eval_on_the_split_reproduces_the_checkpoint_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), SMALL).unwrap();
    ok(&run(d, &["--config", "c.toml", "--out", "run", "train"]));
    let file = CheckpointFile::load(&d.join("run/checkpoint.json")).unwrap();
    let stored = match file.model().unwrap() {
        opinionxf::checkpoint::LoadedModel::OpinionXf(ck) => ck.val_loss,
        other => panic!("unexpected {}", other.kind()),
    };
    let stdout = ok(&run(d, &["--config", "c.toml", "--out", "ev", "eval", "--checkpoint", "run/checkpoint.json"]));
    assert!(stdout.contains(&format!("mean loss {stored:.6}")), "{stdout} vs {stored}");
}

#[test]
fn checkpoint_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), SMALL).unwrap();
    ok(&run(d, &["--config", "c.toml", "--out", "run", "train"]));
    let text = read(&d.join("run/checkpoint.json"));
    let file = CheckpointFile::from_json(&text).unwrap();
    assert_eq!(file.to_json().unwrap(), text);
    let wrong = text.replacen("\"version\":1", "\"version\":99", 1);
    assert!(CheckpointFile::from_json(&wrong).is_err());
}

#[test]
fn compare_writes_one_row_per_system() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), SMALL).unwrap();
    let stdout = ok(&run(d, &["--config", "c.toml", "--out", "cmp", "compare"]));
    let table = ComparisonTable::from_csv(&read(&d.join("cmp/comparison.csv"))).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["base", "fusion", "quantum", "majority", "logreg", "meanpool_mlp"]);
    assert_eq!(stdout, read(&d.join("cmp/comparison.csv")));
    for v in ["base", "fusion", "quantum", "majority"] {
        assert!(d.join(format!("cmp/checkpoint_{v}.json")).exists());
    }
    ok(&run(d, &["--config", "c.toml", "--out", "ev", "eval", "--checkpoint", "cmp/checkpoint_majority.json"]));
}

#[test]
fn seed_flag_beats_environment_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), format!("{SMALL}\n")).unwrap();
    let echoed_seed = |out: &str| {
        let text = read(&d.join(out).join("config.toml"));
        let config = opinionxf::config::RunConfig::from_toml(&text).unwrap();
        (config.generator.seed, config.model.seed, config.training.seed)
    };
    ok(&run(d, &["--config", "c.toml", "--out", "file", "datagen"]));
    assert_eq!(echoed_seed("file").0, opinionxf::dataset::GeneratorConfig::default().seed);

    let env_run = Command::new(env!("CARGO_BIN_EXE_opinionxf"))
        .current_dir(d)
        .env("OPINIONXF_SEED", "41")
        .args(["--config", "c.toml", "--out", "env", "datagen"])
        .output()
        .unwrap();
    ok(&env_run);
    assert_eq!(echoed_seed("env"), (41, 41, 41));

    let both = Command::new(env!("CARGO_BIN_EXE_opinionxf"))
        .current_dir(d)
        .env("OPINIONXF_SEED", "41")
        .args(["--config", "c.toml", "--out", "flag", "--seed", "7", "datagen"])
        .output()
        .unwrap();
    ok(&both);
    assert_eq!(echoed_seed("flag"), (7, 7, 7));
    assert_ne!(read(&d.join("env/records.jsonl")), read(&d.join("flag/records.jsonl")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(d, &["--config", "missing.toml", "train"]).status.code(), Some(1));
    std::fs::write(d.join("bad.toml"), "[model]\nwidth = 3\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.toml", "train"]).status.code(), Some(1));
    let out = run(d, &["eval", "--checkpoint", "nope.json", "--dataset", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&run(dir.path(), &["verify"]));
    assert!(stdout.contains("all checks passed"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn documented_config_sample_parses() {
    let doc = read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/formats.md"));
    let start = doc.find("```toml\n").expect("toml block") + "```toml\n".len();
    let len = doc[start..].find("```").unwrap();
    let config = opinionxf::config::RunConfig::from_toml(&doc[start..start + len]).unwrap();
    assert_eq!(config.training, opinionxf::training::TrainConfig::default());
    assert_eq!(config.model, opinionxf::model::ModelConfig::default());
}
