//! `ctxlm`: command-line driver for contextual LM adaptation experiments.
//!
//! Exit codes: 0 success, 1 invalid configuration or missing input
//! artifact, 2 runtime failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use artifacts::Workspace;
use commands::Failure;

#[derive(Parser)]
#[command(name = "ctxlm", version, about = "Contextual language-model adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set mixture.loss=XENT`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy, PartialEq)]
enum Command {
    /// Generate (or ingest) a corpus, split it and build the vocabulary.
    Synth,
    /// Train one n-gram component per topic.
    TrainNgram,
    /// Tune static interpolation weights with EM on dev.
    TrainMixture,
    /// Train the per-turn weight adapter (dynamic mixture).
    TrainAdapter,
    /// Train the recurrent LM.
    TrainNlm,
    /// Train the topic / dialog-act classifier.
    TrainTopic,
    /// Dev and test perplexity of every configured scorer.
    EvalPpl,
    /// Simulate n-best lists for every split.
    SimulateAsr,
    /// Rescore test n-best lists, tuning lm_scale on dev.
    Rescore,
    /// Comparison table against the designated baseline.
    Report,
    /// Finite-difference checks of every model.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainNgram => "train-ngram",
            Command::TrainMixture => "train-mixture",
            Command::TrainAdapter => "train-adapter",
            Command::TrainNlm => "train-nlm",
            Command::TrainTopic => "train-topic",
            Command::EvalPpl => "eval-ppl",
            Command::SimulateAsr => "simulate-asr",
            Command::Rescore => "rescore",
            Command::Report => "report",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let Some(path) = &cli.config else {
        if cli.command == Command::Gradcheck {
            return match commands::gradcheck(0, None)? {
                true => Ok(()),
                false => Err(Failure::Runtime(anyhow::anyhow!("gradient check failed"))),
            };
        }
        return Err(Failure::Validation(vec!["--config is required".into()]));
    };
    let cfg = config::load(path, &cli.overrides).map_err(Failure::Validation)?;
    let res = cfg.validate().map_err(Failure::Validation)?;
    let mut ws = Workspace::new(&cfg.output_dir);
    match cli.command {
        Command::Synth => commands::synth(&cfg, &mut ws)?,
        Command::TrainNgram => commands::train_ngram(&cfg, &res, &mut ws)?,
        Command::TrainMixture => commands::train_mixture(&cfg, &mut ws)?,
        Command::TrainAdapter => commands::train_adapter_cmd(&cfg, &res, &mut ws)?,
        Command::TrainNlm => commands::train_nlm_cmd(&cfg, &res, &mut ws)?,
        Command::TrainTopic => commands::train_topic_cmd(&cfg, &res, &mut ws)?,
        Command::EvalPpl => commands::eval_ppl(&cfg, &mut ws)?,
        Command::SimulateAsr => commands::simulate_asr(&cfg, &mut ws)?,
        Command::Rescore => commands::rescore(&cfg, &mut ws)?,
        Command::Report => commands::report(&cfg, &mut ws)?,
        Command::Gradcheck => {
            if !commands::gradcheck(cfg.seed, Some(&mut ws))? {
                ws.finish(cli.command.name(), &cfg)?;
                return Err(Failure::Runtime(anyhow::anyhow!("gradient check failed")));
            }
        }
    }
    ws.finish(cli.command.name(), &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(errors)) => {
            eprintln!("invalid configuration ({} error{}):", errors.len(), if errors.len() == 1 { "" } else { "s" });
            for e in errors {
                eprintln!("  - {e}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
