mod commands;
mod data;
mod pipeline;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use settings::{parse_flag, Settings};

/// Contrastive rankers trained on hard negatives from several retrievers.
#[derive(Parser)]
#[command(name = "jointneg", version, about)]
struct Cli {
    /// Flat `key=value` config file.
    #[arg(long, global = true, env = "JOINTNEG_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the inverted index of a dataset's collection.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one of den_bn, lex_bn, den_hn, lex_hn.
    TrainRetriever {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Train a ranker on negatives pooled from a generator set.
    TrainRanker {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Comma-separated generators, e.g. `bm25,den_hn,lex_hn`.
        #[arg(long)]
        generators: String,
    },
    /// Distil a trained ranker into a retriever.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "den_hn")]
        student: String,
        /// Generator set of the teacher ranker.
        #[arg(long)]
        teacher: String,
        #[arg(long, default_value = "den_distilled")]
        output: String,
    },
    /// Rerank BM25 candidates of the dev queries.
    Rerank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        generators: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerank a trained retriever's candidates of the dev queries.
    FullRank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        retriever: String,
        #[arg(long)]
        generators: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        k: Vec<usize>,
    },
    /// Distribution-shift analysis of trained rankers.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Generator sets to analyse (repeatable); defaults to `generator_sets`.
        #[arg(long)]
        generators: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end, resumable.
    Pipeline {
        /// Dataset directory; synthesised into OUT/data when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn settings(cli: &Cli) -> anyhow::Result<Settings> {
    let mut flags = Vec::new();
    if let Some(seed) = cli.seed {
        flags.push(("seed".to_string(), seed.to_string()));
    }
    for kv in &cli.set {
        flags.push(parse_flag(kv)?);
    }
    Settings::layered(
        cli.config.as_deref(),
        |name| std::env::var(name).ok(),
        &flags,
    )
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let settings = settings(&cli).map_err(Failure::Usage)?;
    settings
        .lab
        .validate()
        .map_err(|e| Failure::Usage(e.into()))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("--threads must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let s = &settings;
    let result = match &cli.command {
        Command::Synth { out } => commands::synth(s, out),
        Command::Index { data, out } => commands::index(data, out),
        Command::TrainRetriever { data, models, name } => {
            commands::train_retriever(s, data, models, name)
        }
        Command::TrainRanker {
            data,
            models,
            generators,
        } => commands::train_ranker(s, data, models, generators),
        Command::Distill {
            data,
            models,
            student,
            teacher,
            output,
        } => commands::distill(s, data, models, student, teacher, output),
        Command::Rerank {
            data,
            models,
            generators,
            out,
        } => commands::rerank(s, data, models, generators, out),
        Command::FullRank {
            data,
            models,
            retriever,
            generators,
            out,
        } => commands::full_rank(s, data, models, retriever, generators, out),
        Command::Eval { run, qrels, k } => {
            if k.contains(&0) {
                return Err(Failure::Usage(anyhow::anyhow!("--k values must be >= 1")));
            }
            commands::eval(run, qrels, k).map(|text| print!("{text}"))
        }
        Command::Analyze {
            data,
            models,
            generators,
            out,
        } => commands::analyze(s, data, models, generators, out),
        Command::Pipeline { data, out } => pipeline::run(s, data.as_deref(), out),
    };
    result.map_err(Failure::Runtime)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
