use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use longcl_cli::{compare_runs, render_csv, render_text, run_experiment, ExperimentConfig};
use longcl_core::Error;

/// Continual-learning experiment runner.
#[derive(Parser)]
#[command(name = "longcl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (arm, order, seed) grid described by a JSON config.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this method arm (overrides the config's arms list).
        #[arg(long)]
        arm: Option<String>,
        /// Run only this seed (overrides the config's seeds list).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate run directories into a per-arm AP/AF table.
    Compare {
        /// Run directories (cells or ancestors of cells).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Precondition(_) => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            out,
            arm,
            seed,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(arm) = arm {
                config.arms = vec![arm];
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            config.validate()?;
            let out_dir = out.unwrap_or_else(|| config.out_dir.clone());
            let cells = run_experiment(&config, &out_dir)?;
            for cell in &cells {
                println!(
                    "{}/{}/seed{}: AP {:.4}  AF {:+.4}",
                    cell.arm_label, cell.order_label, cell.seed, cell.ap, cell.af
                );
            }
            println!("wrote {} runs under {}", cells.len(), out_dir.display());
            Ok(())
        }
        Command::Compare { dirs, csv } => {
            let rows = compare_runs(&dirs)?;
            print!("{}", render_text(&rows));
            if let Some(path) = csv {
                std::fs::write(&path, render_csv(&rows))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
