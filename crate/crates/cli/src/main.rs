use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use manifold_loss::config::{parse_config, SEED_ENV};
use manifold_loss::runner::{analyze, run_experiment, RunOptions, Summary};

/// Train denoisers with random-network loss priors and compare grid cells.
#[derive(Debug, Parser)]
#[command(name = "manifold-loss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (cell, seed) pair of a config.
    Run {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Preset chain or group (`main`, `ablation`); replaces the config's
        /// presets. Repeatable.
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// Output directory; replaces `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run; replaces `seeds`. Repeatable or comma separated.
        #[arg(long = "seed", env = SEED_ENV, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write clean, noisy and denoised validation images as PGM.
        #[arg(long)]
        dump_images: bool,
    },
    /// Rebuild summary.json from results.csv.
    Analyze {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn print_summary(s: &Summary) {
    println!("{:<28} {:>5} {:>16} {:>16} {:>9}", "config", "runs", "psnr", "ssim", "dpsnr");
    let fmt = |m: Option<f64>, sd: Option<f64>, p: usize| match (m, sd) {
        (Some(m), Some(sd)) => format!("{m:.p$} ± {sd:.p$}"),
        _ => "-".to_string(),
    };
    for c in &s.cells {
        println!(
            "{:<28} {:>2}/{:<2} {:>16} {:>16} {:>9}",
            c.config_label,
            c.completed,
            c.runs,
            fmt(c.psnr_mean, c.psnr_std, 3),
            fmt(c.ssim_mean, c.ssim_std, 4),
            c.delta_psnr.map_or("-".to_string(), |d| format!("{d:+.3}")),
        );
    }
    for r in s.runs.iter().filter(|r| r.aborted_epoch.is_some()) {
        eprintln!(
            "aborted: {} seed {} at epoch {}",
            r.config_label,
            r.seed,
            r.aborted_epoch.unwrap_or_default()
        );
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let summary = match cli.command {
        Command::Run {
            config,
            presets,
            out,
            seeds,
            jobs,
            dump_images,
        } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
            if !presets.is_empty() {
                cfg.presets = presets;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let outcome = run_experiment(&cfg, &RunOptions { jobs, dump_images })?;
            println!("wrote {}", outcome.output_dir.display());
            outcome.summary
        }
        Command::Analyze { dir } => analyze(&dir).with_context(|| format!("analyzing {}", dir.display()))?,
    };
    print_summary(&summary);
    Ok(summary.any_aborted())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
