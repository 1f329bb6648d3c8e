//! `zsda`: train, fine-tune, evaluate and ablate from the command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 config error, 3 IO
//! error, 4 corrupt or version-mismatched artifact.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{CliConfig, Preset};

#[derive(Parser)]
#[command(name = "zsda", version, about = "Zero-shot domain adaptation on synthetic detection worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Training schedule to apply on top of the config.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl Common {
    fn load(&self) -> anyhow::Result<CliConfig> {
        let cfg = match &self.config {
            Some(p) => config::load(p)?,
            None => CliConfig::default(),
        };
        config::resolve(cfg, self.preset, self.seed, self.out.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: learn prompt contexts and the enhancement.
    TrainPrompt(Common),
    /// Stage 2: freeze stage-1 parameters and fine-tune the detector head.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Zero-shot evaluation with enhancement disabled.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain to evaluate; repeatable. Defaults to the config's eval domains.
        #[arg(long = "domain")]
        domains: Vec<String>,
        #[arg(long, default_value = "zsda-out")]
        out: PathBuf,
    },
    /// Run an ablation grid from a JSON file and write a CSV table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "zsda-out")]
        out: PathBuf,
        /// Replaces the spec's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Image embeddings per domain and scene, for external plotting.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain to export; repeatable.
        #[arg(long = "domain", required = true)]
        domains: Vec<String>,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value = "zsda-out")]
        out: PathBuf,
    },
    /// Finite-difference check of every loss and op.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Adds a bias to every analytic gradient (negative control).
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_fault: f64,
    },
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainPrompt(common) => print_paths(&commands::train_prompt(&common.load()?)?),
        Command::Finetune { common, checkpoint } => {
            let cfg = common.load()?;
            print_paths(&commands::finetune(&cfg, common.config.is_some(), &checkpoint)?);
        }
        Command::Eval { checkpoint, domains, out } => {
            let (table, path) = commands::eval(&checkpoint, &domains, &out)?;
            print!("{table}");
            print_paths(&[path]);
        }
        Command::Ablate { config, out, seed, preset } => {
            let mut spec = config::load_ablation(&config)?;
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            if let Some(p) = preset {
                p.apply(&mut spec.base.train);
                for row in &mut spec.rows {
                    p.apply(&mut row.train);
                }
            }
            print_paths(&commands::ablate(&spec, &out)?);
        }
        Command::ExportEmbeddings { checkpoint, domains, scenes, out } => {
            print_paths(&[commands::export_embeddings(&checkpoint, &domains, scenes, &out)?]);
        }
        Command::Gradcheck { seeds, inject_fault } => print!("{}", commands::gradcheck(seeds, inject_fault)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
