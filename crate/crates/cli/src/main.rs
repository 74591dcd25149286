use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use upo_core::evolve::IterationMetrics;
use upo_core::experiment::{
    cmd_ablate, cmd_export_plots, cmd_init, cmd_iterate, cmd_noise_study, ExperimentConfig, StrategyName, Variant,
    NOISE_STUDY_FILE,
};

/// Uncertainty-enhanced iterative preference optimization on a synthetic world.
#[derive(Parser, Debug)]
#[command(name = "upo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the world, seed data and SFT policy, then run round 0.
    Init {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `output_dir` from the config.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Overrides the config's root seed.
        #[arg(long, env = "UPO_SEED")]
        seed: Option<u64>,
    },
    /// Run more rounds from the latest saved one.
    Iterate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = 3)]
        iters: usize,
    },
    /// Compare the noise rate of the pair sampling strategies.
    NoiseStudy {
        #[arg(long)]
        state: PathBuf,
        /// Comma-separated; defaults to the strategies in the run's config.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<StrategyName>>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Pairs per strategy; defaults to the run's `noise_sample_size`.
        #[arg(long)]
        sample_size: Option<usize>,
    },
    /// Re-run round 1 with one component disabled.
    Ablate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        variant: Variant,
    },
    /// Write a long-format plot-data CSV for a run directory.
    ExportPlots {
        #[arg(long)]
        state: PathBuf,
    },
}

fn print_metrics(m: &IterationMetrics) {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "iter {} win_rate_vs_sft {:.4} noise_rate_selected {} mean_b_hat {} loss_final {:.4}",
        m.iteration,
        m.win_rate_vs_sft,
        opt(m.noise_rate_selected),
        opt(m.mean_b_hat),
        m.loss_final
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { config, state, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.root_seed = s;
            }
            let Some(dir) = state.or_else(|| cfg.output_dir.clone()) else {
                bail!(
                    "no run directory: pass --state or set output_dir in {}",
                    config.display()
                );
            };
            info!("init {} with root seed {}", dir.display(), cfg.root_seed);
            let m = cmd_init(&cfg, &dir).with_context(|| format!("init {}", dir.display()))?;
            print_metrics(&m);
        }
        Command::Iterate { state, iters } => {
            for m in cmd_iterate(&state, iters).with_context(|| format!("iterate {}", state.display()))? {
                print_metrics(&m);
            }
        }
        Command::NoiseStudy {
            state,
            strategies,
            seeds,
            sample_size,
        } => {
            let config = ExperimentConfig::load(&state.join(upo_core::experiment::CONFIG_FILE))?;
            let strategies = strategies.unwrap_or(config.strategies.clone());
            let n = sample_size.unwrap_or(config.noise_sample_size);
            let rows = cmd_noise_study(&state, &strategies, n, &seeds)
                .with_context(|| format!("noise study {}", state.display()))?;
            for s in &strategies {
                let rates: Vec<f64> = rows.iter().filter(|r| r.strategy == *s).map(|r| r.noise_rate).collect();
                let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
                println!("{s} mean_noise_rate {mean:.4} seeds {}", rates.len());
            }
            info!("wrote {}", state.join(NOISE_STUDY_FILE).display());
        }
        Command::Ablate { state, variant } => {
            let m = cmd_ablate(&state, variant).with_context(|| format!("ablate {}", state.display()))?;
            print!("{variant} ");
            print_metrics(&m);
        }
        Command::ExportPlots { state } => {
            let path = cmd_export_plots(&state).with_context(|| format!("export plots {}", state.display()))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
