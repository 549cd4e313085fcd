//! `blxam`: lexicons, synthetic corpora, staged training, evaluation and
//! trend tables for bilingual acoustic models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 invariant violation.

mod commands;
mod config;
mod failure;
mod fsutil;

use std::path::PathBuf;
use std::process::ExitCode;

use blxam::synthdata::{Condition, Split};
use blxam::{DecodeMode, LocaleId, Stage};
use clap::{Parser, Subcommand};

use crate::commands::{EvalArgs, TrainArgs};
use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "blxam",
    version,
    about = "Bilingual acoustic modeling pipeline on synthetic speech"
)]
struct Cli {
    /// Run configuration file (TOML); built-in defaults when omitted.
    #[arg(long, short, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the configuration's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configuration's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,

    /// Build grapheme lexicons and unit inventories from word lists.
    Lexicon {
        /// Word list, one word per line; give one or two.
        #[arg(long = "words", required = true, value_name = "FILE")]
        words: Vec<PathBuf>,

        /// Locale name per word list, in the same order; defaults to the
        /// configured corpus locales.
        #[arg(long = "locale", value_name = "NAME")]
        locales: Vec<String>,

        /// Output directory; defaults to `<out_dir>/lexicon`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Generate the synthetic corpus into `<out_dir>/corpus`.
    Gen,

    /// Run one training stage and save `<out_dir>/models/<name>`.
    Train {
        /// bilingual-pretrain, lid-finetune or aux-joint.
        #[arg(long)]
        stage: Stage,

        /// Model name; defaults to pretrain, lid or aux by stage.
        #[arg(long)]
        name: Option<String>,

        /// Starting checkpoint (model name or directory); lid-finetune
        /// defaults to `pretrain`, other stages start from scratch.
        #[arg(long)]
        init: Option<String>,

        /// Comma-separated train conditions (mono-a, mono-b, code-mixed);
        /// all by default.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<Condition>>,
    },

    /// Decode a split with a trained model and save `<out_dir>/reports/<label>`.
    Eval {
        /// Model name under `<out_dir>/models` or a checkpoint directory.
        #[arg(long)]
        model: String,

        /// bilingual, mono-a, mono-b or lid-combined; defaults to decode.mode.
        #[arg(long)]
        mode: Option<DecodeMode>,

        /// train, dev or test.
        #[arg(long, default_value = "test")]
        split: Split,

        /// Report name; defaults to `<model>-<mode>`.
        #[arg(long)]
        label: Option<String>,
    },

    /// Compare reports: WER per condition and WERR against the first system.
    Trends {
        /// Report directories or report.json files; the first is the base.
        #[arg(required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,

        /// Also write the table to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,

        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Lexicon {
            words,
            locales,
            out,
        } => {
            let locales: Vec<LocaleId> = if locales.is_empty() {
                cfg.corpus.locales.to_vec()
            } else {
                locales.iter().map(LocaleId::new).collect()
            };
            let out = out.unwrap_or_else(|| cfg.out_dir.join("lexicon"));
            commands::cmd_lexicon(&words, &locales, &out)
        }
        Command::Gen => commands::cmd_gen(&cfg),
        Command::Train {
            stage,
            name,
            init,
            conditions,
        } => commands::cmd_train(
            &cfg,
            &TrainArgs {
                stage,
                name,
                init,
                conditions,
            },
        ),
        Command::Eval {
            model,
            mode,
            split,
            label,
        } => commands::cmd_eval(
            &cfg,
            &EvalArgs {
                model,
                mode,
                split,
                label,
            },
        ),
        Command::Trends { reports, out, json } => {
            commands::cmd_trends(&reports, out.as_deref(), json)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                failure::EXIT_USAGE
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
