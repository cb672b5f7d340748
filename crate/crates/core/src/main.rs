use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use topkd::harness::{self, ExperimentConfig, Sweep};

#[derive(Parser)]
#[command(name = "topkd", version, about = "Top-K scaled logit distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher with cross-entropy and save `teacher.json`.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Distill one student per seed from a trained teacher.
    Distill {
        #[arg(long)]
        config: PathBuf,
        /// Teacher checkpoint (not needed for method `scratch`).
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Sweep one parameter, e.g. `--sweep k=1,3,5,10` or `--sweep method=scratch,kd_kl,topkd`.
    /// A bare `method`, `k`, `alpha` or `beta` uses a preset value list.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: String,
        /// Teacher checkpoint; trained from the config when omitted.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Where the teacher's top-1 mistakes land relative to its top-k and the
    /// class hierarchy. Prints JSON.
    AnalyzeTopk {
        #[arg(long)]
        teacher: PathBuf,
        /// `default`, a CSV file, or a JSON dataset spec / experiment config.
        #[arg(long, default_value = "default")]
        data: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Normalized difference of teacher and student logit correlation matrices.
    AnalyzeCorr {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long, default_value = "default")]
        data: String,
        /// Directory receiving `corr_diff.csv`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainTeacher { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&harness::cmd_train_teacher(&cfg)?)
        }
        Command::Distill { config, teacher } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&harness::cmd_distill(&cfg, teacher.as_deref())?)
        }
        Command::Ablate { config, sweep, teacher } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sweep = Sweep::parse(&sweep)?;
            let table = harness::cmd_ablate(&cfg, &sweep, teacher.as_deref())?;
            print!("{}", table.summary_csv());
            Ok(())
        }
        Command::AnalyzeTopk { teacher, data, k } => print_json(&harness::cmd_analyze_topk(&teacher, &data, k)?),
        Command::AnalyzeCorr {
            teacher,
            student,
            data,
            out_dir,
        } => print_json(&harness::cmd_analyze_corr(&teacher, &student, &data, &out_dir)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("topkd") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
