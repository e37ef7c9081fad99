//! Command-line driver for the alpha-sweep experiment.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctloss::harness::{parse_config, report_text, Experiment, ExperimentConfig, Stage};
use ctloss::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ctloss", version, about = "Counts-domain denoising with frequency-shaped losses")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated alpha list, overriding `alpha_list`.
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Stage to run when no subcommand is given.
    #[arg(long, global = true)]
    stage: Option<String>,
    /// Also write 8-bit PGM previews.
    #[arg(long, global = true)]
    pgm: bool,
    /// PGM display window, 1/mm.
    #[arg(long, global = true)]
    window: Option<f64>,
    /// PGM display level, 1/mm.
    #[arg(long, global = true)]
    level: Option<f64>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate phantom images.
    Phantom,
    /// Project phantoms and synthesise noisy sinograms.
    Simulate,
    /// Train one denoiser per alpha.
    Train,
    /// Denoise the held-out sinograms.
    Infer,
    /// Reconstruct uncorrected and denoised images.
    Recon,
    /// Measure NPS and band metrics.
    Nps,
    /// Write the report tables.
    Report,
    /// Run every stage in order.
    RunAll,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Phantom => Stage::Phantom,
            Command::Simulate => Stage::Simulate,
            Command::Train => Stage::Train,
            Command::Infer => Stage::Infer,
            Command::Recon => Stage::Recon,
            Command::Nps => Stage::Nps,
            Command::Report => Stage::Report,
            Command::RunAll => Stage::RunAll,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::Usage("either --config or --out is required".into()))?;
            ExperimentConfig::with_defaults(cli.seed.unwrap_or(0), out)
        }
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &cli.alpha {
        cfg.alpha_list = list
            .split(',')
            .map(|a| {
                a.trim()
                    .parse()
                    .map_err(|_| Error::Usage(format!("--alpha expects comma-separated numbers, got `{list}`")))
            })
            .collect::<Result<_>>()?;
    }
    cfg.pgm_export |= cli.pgm;
    if let Some(w) = cli.window {
        cfg.pgm_window = w;
    }
    if let Some(l) = cli.level {
        cfg.pgm_level = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let stage = match (cli.command, &cli.stage) {
        (Some(c), _) => Stage::from(c),
        (None, Some(s)) => s.parse()?,
        (None, None) => Stage::RunAll,
    };
    let mut exp = Experiment::new(build_config(cli)?)?;
    exp.verbose = !cli.quiet;
    if let Some(rows) = exp.run_stage(stage)? {
        print!("{}", report_text(&rows)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctloss: {e}");
            ExitCode::FAILURE
        }
    }
}
