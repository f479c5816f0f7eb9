use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trigger3::edits::Level;
use trigger3::harness::{self, HarnessConfig, RunOptions, ThresholdSweep};
use trigger3::scorer::render_table;
use trigger3::{Error, Result};

/// Query correction with a small model, an LLM and three learned triggers.
#[derive(Parser)]
#[command(name = "trigger3", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Run {
    /// Worker threads for corrector calls.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Use only the first N records of the split.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Inject noise into clean queries and write the corpus splits.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Print the gold edits of a corpus in M2 format.
    ExtractEdits {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "char")]
        level: LevelArg,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypotheses (JSONL with id and hypothesis or y_final) against a corpus.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        hypotheses: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run both correctors over the train split and write trigger labels.
    BuildLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: Run,
    },
    /// Train the three triggers and any routers the policies need.
    TrainTrigger {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every configured policy on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: Run,
        /// Evaluate trigger3 at each threshold in start:stop:step.
        #[arg(long)]
        threshold_sweep: Option<ThresholdSweep>,
    },
    /// Render several evaluation reports as one table.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LevelArg {
    Char,
    Word,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Level {
        match l {
            LevelArg::Char => Level::Char,
            LevelArg::Word => Level::Word,
        }
    }
}

fn load(common: &Common) -> Result<HarnessConfig> {
    let mut cfg = HarnessConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { common } => {
            let summary = harness::cmd_gen_corpus(&load(&common)?)?;
            emit(&json(&summary));
        }
        Command::ExtractEdits { corpus, level, out } => {
            let m2 = harness::cmd_extract_edits(&corpus, level.into())?;
            match out {
                Some(path) => std::fs::write(&path, m2).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?,
                None => emit(&m2),
            }
        }
        Command::Score {
            corpus,
            hypotheses,
            json: as_json,
        } => {
            let score = harness::cmd_score(&corpus, &hypotheses)?;
            if as_json {
                emit(&json(&score));
            } else {
                emit(&render_table(&[("hypotheses".into(), &score, None)], None));
            }
        }
        Command::BuildLabels { common, run } => {
            let opts = RunOptions {
                parallelism: run.parallelism,
                limit: run.limit,
                threshold_sweep: None,
            };
            let summary = harness::cmd_build_labels(&load(&common)?, &opts)?;
            emit(&json(&summary));
        }
        Command::TrainTrigger { common } => {
            let summary = harness::cmd_train(&load(&common)?)?;
            emit(&json(&summary));
        }
        Command::Eval {
            common,
            run,
            threshold_sweep,
        } => {
            let opts = RunOptions {
                parallelism: run.parallelism,
                limit: run.limit,
                threshold_sweep,
            };
            let report = harness::cmd_eval(&load(&common)?, &opts)?;
            emit(&report.render());
        }
        Command::Compare { reports } => emit(&harness::cmd_compare(&reports)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
