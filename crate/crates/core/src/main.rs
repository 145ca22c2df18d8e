use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opinionxf::cli;
use opinionxf::config::{RunConfig, SEED_ENV};
use opinionxf::Error;

#[derive(Parser)]
#[command(name = "opinionxf", version, about = "Opinion-shift prediction pipeline")]
struct Args {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for generation, initialisation and shuffling. Takes precedence
    /// over OPINIONXF_SEED, which takes precedence over the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with decks and embeddings.
    Datagen,
    /// Train the configured model and keep the best checkpoint.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        /// Checkpoint written by `train` or `compare`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records to score; the configured validation split when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train all variants and baselines on one split and tabulate them.
    Compare,
    /// Run the oracle suite.
    Verify,
}

fn load_config(args: &Args) -> Result<(RunConfig, PathBuf), Error> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    config.apply_seed_override(args.seed, env.as_deref())?;
    config.training = cli::with_threads(&config.training, args.threads);
    config.validate()?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.out_dir.clone());
    config.paths.out_dir = out.clone();
    Ok((config, out))
}

fn run(args: Args) -> Result<ExitCode, Error> {
    let log = |m: &str| eprintln!("{m}");
    if let Command::Verify = args.command {
        let checks = cli::cmd_verify();
        for c in &checks {
            println!("{c}");
        }
        let ok = checks.iter().all(|c| c.pass);
        println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    let (config, out) = load_config(&args)?;
    match args.command {
        Command::Datagen => {
            let s = cli::cmd_datagen(&config, &out)?;
            println!("wrote {} (config {})", s.records.display(), &s.config_hash[..12]);
            for (topic, rates) in &s.shift_rates {
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                let per_q: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
                println!("{topic:<16} mean shift {mean:.3}  [{}]", per_q.join(" "));
            }
        }
        Command::Train => {
            let s = cli::cmd_train(&config, &out, log)?;
            println!(
                "best epoch {} val loss {:.6} val macro-F1 {:.4} (config {})",
                s.checkpoint.epoch,
                s.checkpoint.val_loss,
                s.checkpoint.val_macro_f1,
                &s.config_hash[..12]
            );
        }
        Command::Eval {
            ref checkpoint,
            ref dataset,
        } => {
            let o = cli::cmd_eval(checkpoint, dataset.as_deref(), &config, &out)?;
            println!(
                "{}: n={} accuracy {:.4} macro-F1 {:.4}",
                o.kind, o.report.n_eval, o.report.micro_accuracy, o.report.macro_f1
            );
            if let Some(l) = o.loss {
                println!("mean loss {l:.6}");
            }
            for (topic, m) in &o.report.per_topic {
                println!(
                    "  {topic:<16} macro-F1 {:.4} accuracy {:.4} shift agreement {:.4}",
                    m.macro_f1, m.micro_accuracy, m.shift_agreement
                );
            }
        }
        Command::Compare => {
            let table = cli::cmd_compare(&config, &out, log)?;
            print!("{}", table.to_csv());
        }
        Command::Verify => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
