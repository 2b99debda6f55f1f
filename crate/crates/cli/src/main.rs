use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod files;

#[derive(Parser)]
#[command(
    name = "fraudformer",
    version,
    about = "Behavior-sequence pretraining and fraud scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON run configuration; missing sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arithmetic used for training and scoring.
    #[arg(long, value_enum, default_value = "f32")]
    pub mode: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (JSONL plus vocabulary sidecar).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Next-event pretraining of a fresh backbone.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised anomaly fine-tuning on top of a checkpoint.
    FinetuneSft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive fine-tuning with dropout views.
    FinetuneCl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write eval-mode embeddings of the data as CSV.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Score every user with a binary-head checkpoint.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranked report from scores, or per-class report from a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(
            long,
            conflicts_with = "checkpoint",
            required_unless_present = "checkpoint"
        )]
        scores: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Top-k fractions, e.g. 0.01,0.001,0.0001.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
        /// Write `<out>.txt` and `<out>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient (64-bit only).
    Gradcheck {
        #[arg(long, value_enum, default_value = "f64")]
        mode: Precision,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Desk-scale end-to-end run with pass/fail thresholds.
    Smoke {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::GenData { common, out } => commands::gen_data(&common, &out),
        Command::Pretrain { common, data, out } => commands::pretrain(&common, &data, &out),
        Command::FinetuneSft {
            common,
            checkpoint,
            data,
            out,
        } => commands::finetune_sft(&common, &checkpoint, &data, &out),
        Command::FinetuneCl {
            common,
            checkpoint,
            data,
            out,
            embeddings,
        } => commands::finetune_cl(&common, &checkpoint, &data, &out, embeddings.as_deref()),
        Command::Score {
            common,
            checkpoint,
            data,
            out,
        } => commands::score(&common, &checkpoint, &data, &out),
        Command::Eval {
            common,
            data,
            scores,
            checkpoint,
            k,
            out,
        } => commands::eval(
            &common,
            &data,
            scores.as_deref(),
            checkpoint.as_deref(),
            k,
            out.as_deref(),
        ),
        Command::Gradcheck { mode, seed } => {
            if mode == Precision::F32 {
                use clap::CommandFactory;
                Cli::command()
                    .error(
                        clap::error::ErrorKind::InvalidValue,
                        "gradcheck runs in 64-bit arithmetic only; drop --mode f32",
                    )
                    .exit();
            }
            commands::gradcheck(seed.unwrap_or(0))
        }
        Command::Smoke { config, seed } => commands::smoke(config.as_deref(), seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
