//! Command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "vaelens", version, about = "Pullback-metric robustness experiments for VAE encoders")]
pub struct Cli {
    /// TOML experiment configuration; built-in synthetic defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Use the 50-value beta grid and 40-value delta grid.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[arg(long, global = true, value_parser = ["encoder", "combined"])]
    pub metric_source: Option<String>,
    #[arg(long, global = true, value_parser = ["scaled", "unit"])]
    pub attack_mode: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes model.ckpt and losses.csv.
    Train {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        mixup_weight: Option<f64>,
    },
    /// Eigendirection attack on the test split of a trained model.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        /// Comma-separated 1-based eigendirection indices.
        #[arg(long, value_delimiter = ',')]
        directions: Vec<usize>,
        /// Write a PGM grid of originals and corrupted images.
        #[arg(long)]
        images: bool,
    },
    /// Train, score and attack over the beta grid and seeds.
    BetaSweep,
    /// Mean latent shift along the top eigendirection over the delta grid.
    LatentDistance {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-sample spectral radius and Von Neumann entropy.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render SVG charts from CSV outputs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if self.paper_scale {
            cfg.paper_scale();
        }
        if let Some(m) = &self.metric_source {
            cfg.metric_source = m.clone();
        }
        if let Some(m) = &self.attack_mode {
            cfg.attack_mode = m.clone();
        }
        match &self.command {
            Command::Train { beta, epochs, mixup_weight } => {
                if let Some(b) = beta {
                    cfg.train.beta = *b;
                }
                if let Some(e) = epochs {
                    cfg.train.epochs = *e;
                }
                if let Some(w) = mixup_weight {
                    cfg.train.mixup_weight = *w;
                }
            }
            Command::Attack { deltas, directions, images, .. } => {
                if !deltas.is_empty() {
                    cfg.attack.deltas = deltas.clone();
                }
                if !directions.is_empty() {
                    cfg.attack.directions = directions.clone();
                }
                cfg.attack.images |= images;
            }
            Command::Report { bins: Some(b), .. } => cfg.histogram_bins = *b,
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<Vec<PathBuf>> {
        let cfg = self.resolve_config()?;
        match &self.command {
            Command::Train { .. } => commands::cmd_train(&cfg),
            Command::Attack { checkpoint, .. } => commands::cmd_attack(&cfg, checkpoint),
            Command::BetaSweep => commands::cmd_beta_sweep(&cfg),
            Command::LatentDistance { checkpoint } => commands::cmd_latent_distance(&cfg, checkpoint),
            Command::Score { checkpoint } => commands::cmd_score(&cfg, checkpoint),
            Command::Report { inputs, .. } => commands::cmd_report(inputs, &cfg.output_dir, cfg.histogram_bins),
        }
    }
}

/// Parses `args` (including the program name), runs the command, prints the
/// written files, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.execute() {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
