//! Command-line front end.

use clap::{Parser, Subcommand};
use periscat::harness::{convergence_study, mesh_info, run_case, ExperimentConfig, Reference};
use periscat::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "periscat", version, about = "Scattering by locally perturbed periodic surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and write solution.csv and meta.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence study in N on a fixed mesh.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "N", value_delimiter = ',', default_value = "4,8,16,32,64")]
        n: Vec<usize>,
        #[arg(long, default_value = "self:256")]
        reference: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print mesh and breakpoint information.
    MeshInfo {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve { config, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let summary = run_case(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Converge {
            config,
            n,
            reference,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let reference: Reference = reference.parse()?;
            let report = convergence_study(&cfg, &n, reference)?;
            print!("{}", report.to_csv());
            match report.slope {
                Some(s) => eprintln!("slope before plateau: {s:.3} (reference {})", report.reference),
                None => eprintln!("slope before plateau: n/a (reference {})", report.reference),
            }
        }
        Command::MeshInfo { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            println!("{}", serde_json::to_string_pretty(&mesh_info(&cfg)?).expect("info serializes"));
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
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
