use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semilinear_spde::cli::{run_from_config, RunConfig, RunOverrides};
use semilinear_spde::coefficients::{CoefficientSet, Preset};

#[derive(Parser)]
#[command(name = "spde-lab", version, about = "Small-noise studies for 1-D semilinear stochastic heat equations")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for replica parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Coefficient presets.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    List,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run_from_config(&config, &RunOverrides { out, seed, threads }).map(|manifest| {
            for path in manifest.paths() {
                println!("{}", path.display());
            }
        }),
        Command::Validate { config } => RunConfig::load(&config).map(|cfg| {
            println!("ok: {:?} on preset {}", cfg.experiment, cfg.study.preset.name());
        }),
        Command::Presets {
            action: PresetsAction::List,
        } => {
            for preset in Preset::ALL {
                let c = CoefficientSet::preset(preset);
                println!(
                    "{:<20} K={} L={}  {}",
                    preset.name(),
                    c.growth_k,
                    c.lipschitz_l,
                    preset.describe()
                );
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
