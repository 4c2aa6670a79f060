use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavesfm::eval::{exit_code, run_experiment, ExperimentConfig, MetricReport, Stage};

/// Masked-autoencoder pretraining, fine-tuning, evaluation and data simulation
/// for wireless grid data.
#[derive(Parser)]
#[command(name = "wavesfm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Masked reconstruction pretraining of the encoder and decoder.
    Pretrain(RunArgs),
    /// Fine-tune a task head (and optionally part of the encoder).
    Finetune(RunArgs),
    /// Evaluate a saved checkpoint.
    Evaluate(RunArgs),
    /// Generate a synthetic data archive.
    Simulate(RunArgs),
    /// Print a config file with every default filled in.
    Template {
        #[arg(value_parser = parse_stage)]
        stage: Stage,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-sample predictions next to the metrics.
    #[arg(long)]
    dump_preds: bool,
    /// Override the number of fine-tuning runs.
    #[arg(long)]
    runs: Option<usize>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match s {
        "pretrain" => Ok(Stage::Pretrain),
        "finetune" => Ok(Stage::Finetune),
        "evaluate" => Ok(Stage::Evaluate),
        "simulate" => Ok(Stage::Simulate),
        other => Err(format!("unknown stage `{other}`")),
    }
}

fn load(stage: Stage, args: &RunArgs) -> wavesfm::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.stage != stage {
        log::warn!("config declares stage `{}`, running `{}`", cfg.stage.name(), stage.name());
        cfg.stage = stage;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    cfg.dump_preds |= args.dump_preds;
    Ok(cfg)
}

fn print_summary(report: &MetricReport, out: &std::path::Path) {
    println!("stage {} (seed {}) finished; outputs in {}", report.stage.name(), report.seed, out.display());
    for (i, run) in report.runs.iter().enumerate() {
        if let Some(e) = &run.final_eval {
            println!("  run {i} seed {}: {} = {:.6}", run.seed, e.metric, e.value);
        } else if let Some(last) = run.epochs.last() {
            println!("  run {i} seed {}: final loss {:.6} after {} epochs", run.seed, last.loss, last.epoch);
        }
    }
    if let Some(s) = &report.summary {
        println!("  {}: {:.6} ± {:.6} over {} runs", s.metric, s.mean, s.std, s.values.len());
    }
    if let Some(e) = &report.evaluation {
        println!("  {} = {:.6} on {} samples", e.metric, e.value, e.samples);
        if let Some(d) = e.reproduced_delta {
            println!("  difference from the stored metric: {d:e}");
        }
        if let Some(x) = e.crossover_snr_db {
            println!("  LS overtakes the model from {x} dB");
        }
    }
    if let Some(a) = &report.archive {
        println!("  {} samples written to {}", report.samples, a.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::Pretrain(a) => (Stage::Pretrain, a),
        Command::Finetune(a) => (Stage::Finetune, a),
        Command::Evaluate(a) => (Stage::Evaluate, a),
        Command::Simulate(a) => (Stage::Simulate, a),
        Command::Template { stage } => {
            return match ExperimentConfig::template(*stage).to_toml_string() {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            };
        }
    };
    let result = load(stage, args).and_then(|cfg| run_experiment(&cfg).map(|r| (r, cfg.out_dir)));
    match result {
        Ok((report, out)) => {
            print_summary(&report, &out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
