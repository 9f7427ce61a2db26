//! `ngram-hmm`: train, evaluate and inspect n-gram HMM language models.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;
mod config;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use ngram_hmm::exec::{init_workers, Execution};

/// Invalid invocation or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "ngram-hmm", version, about = "Nonparametric n-gram HMM language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it with a log and a JSON summary.
    Train(TrainArgs),
    /// Held-out perplexity of a saved model.
    Eval(EvalArgs),
    /// Words used like a query word in a given context.
    Similar(SimilarArgs),
    /// Genre (topic) assignments for the documents of a text file.
    Genre(GenreArgs),
    /// Held-out topic-model likelihood over a range of topic counts.
    SweepC(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Hpylm,
    Nhmm,
    Lda,
    Joint,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Hpylm => "hpylm",
            Kind::Nhmm => "nhmm",
            Kind::Lda => "lda",
            Kind::Joint => "joint",
        }
    }
}

#[derive(Args, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, env = "HMMLM_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

impl Common {
    pub fn run_config(&self) -> Result<RunConfig, UsageError> {
        let mut c = RunConfig::default();
        if let Some(p) = &self.config {
            c.apply_file(p)?;
        }
        for a in &self.set {
            c.apply(a)?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn execution(&self) -> Execution {
        init_workers(self.workers);
        if self.workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    kind: Kind,
    /// Training text: one sentence per line, documents separated by `###DOC###`.
    #[arg(long)]
    train: PathBuf,
    /// Held-out text scored after training.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Stem of the output files; defaults to the model kind.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    AddOne,
    Kn,
}

#[derive(Args)]
pub struct EvalArgs {
    model: PathBuf,
    heldout: PathBuf,
    /// Vocabulary file the held-out text was prepared with; refused unless
    /// it matches the model's.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Also score a count-based baseline trained on `--train`.
    #[arg(long, requires = "train")]
    baseline: Option<Baseline>,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Absolute discount of the Kneser-Ney baseline.
    #[arg(long, default_value_t = 0.75)]
    kn_discount: f64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
pub struct SimilarArgs {
    model: PathBuf,
    /// Query word.
    word: String,
    /// Preceding words, space separated.
    #[arg(long, default_value = "")]
    context: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Genre whose chain answers the query (joint models only).
    #[arg(long)]
    genre: Option<u32>,
}

#[derive(Args)]
pub struct GenreArgs {
    model: PathBuf,
    docs: PathBuf,
    /// Assignment table; defaults to `<out-dir>/genres.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    /// Topic counts to try, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    topics: Vec<usize>,
    #[command(flatten)]
    common: Common,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train::cmd_train(&a),
        Command::Eval(a) => commands::cmd_eval(&a),
        Command::Similar(a) => commands::cmd_similar(&a),
        Command::Genre(a) => commands::cmd_genre(&a),
        Command::SweepC(a) => commands::cmd_sweep(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
