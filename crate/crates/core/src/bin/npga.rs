use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use npga::cli::{cmd_eval, cmd_export_latent, cmd_gen_synth, cmd_gradcheck, cmd_grid, cmd_train, RunConfig};
use npga::data::Split;

#[derive(Parser)]
#[command(
    name = "npga",
    version,
    about = "Train and evaluate GP-guided denoising autoencoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `model.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic multi-factor dataset.
    GenSynth(Common),
    /// Train one model and write checkpoint, trace and metrics.
    Train(Common),
    /// Probe an existing checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every (alpha, beta, repeat) cell of the grid.
    Grid(Common),
    /// Write latent coordinates of one GP term.
    ExportLatent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// GP spec index.
        #[arg(long, default_value_t = 0)]
        spec: usize,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Finite-difference check of every cost gradient.
    Gradcheck(Common),
}

fn load(common: &Common) -> npga::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.model.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> npga::Result<bool> {
    match cli.command {
        Command::GenSynth(c) => {
            let ceiling = cmd_gen_synth(&load(&c)?, &c.out)?;
            println!("nearest-template test accuracy {ceiling:.4}");
        }
        Command::Train(c) => {
            let art = cmd_train(&load(&c)?, &c.out)?;
            print!("{}", art.metrics.to_text());
        }
        Command::Eval { common, checkpoint } => {
            let m = cmd_eval(&load(&common)?, &checkpoint, &common.out)?;
            print!("{}", m.to_text());
        }
        Command::Grid(c) => {
            let (rows, _) = cmd_grid(&load(&c)?, &c.out)?;
            let failed = rows.iter().filter(|r| r.test_error.is_err()).count();
            println!("{} cells, {failed} failed", rows.len());
        }
        Command::ExportLatent {
            common,
            checkpoint,
            spec,
            split,
        } => {
            let path = common.out.join(format!("latent_gp{spec}_{split}.tsv"));
            cmd_export_latent(&load(&common)?, &checkpoint, spec, split, &path)?;
            println!("{}", path.display());
        }
        Command::Gradcheck(c) => {
            let reports = cmd_gradcheck(&load(&c)?, Some(&c.out))?;
            for r in &reports {
                println!("{}", r.line());
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
