use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use legsim::config::Config;
use legsim::error::{exit, HarnessError, Result};
use legsim::experiments::{run_experiment, run_feasibility, run_trot, ExperimentId};
use legsim::report::{emit_report, Format, TrialReport};
use legsim_core::urdf::export_robot_description;

#[derive(Parser)]
#[command(
    name = "legsim",
    version,
    about = "Quadruped locomotion simulator and experiment harness"
)]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the walking duration of `simulate` (s).
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Comma-separated output formats: json, csv, svg, text, telemetry.
    #[arg(long, global = true, value_delimiter = ',', default_value = "json,csv,svg,text")]
    formats: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and print the resolved document.
    Validate,
    /// Trot in a straight line and write telemetry.
    Simulate {
        /// Commanded forward speed (m/s).
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Run one experiment: grf-validation, limb-ratio-kinematics, inertia-cot, feasibility-map.
    Experiment { id: String },
    /// Sweep limb lengths for each configured gear ratio.
    FeasibilityMap,
    /// Write the robot description of the configured morphology.
    ExportUrdf,
}

fn load(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(d) = cli.duration {
        config.run.duration = d;
    }
    if let Command::Simulate { speed: Some(v) } = &cli.command {
        config.run.speed = *v;
    }
    config.validated()
}

fn formats(cli: &Cli) -> Result<Vec<Format>> {
    cli.formats.iter().map(|f| f.trim().parse()).collect()
}

fn emit(report: &TrialReport, dir: &Path, formats: &[Format]) -> Result<()> {
    let files = emit_report(report, dir, formats)?;
    print!("{}", report.to_text());
    for f in files {
        println!("wrote {}", f.display());
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::RunsFailed(report.failures.len()))
    }
}

fn run(cli: &Cli) -> Result<()> {
    let formats = formats(cli)?;
    let config = load(cli)?;
    match &cli.command {
        Command::Validate => {
            print!("{}", config.to_toml());
            eprintln!("configuration valid");
            Ok(())
        }
        Command::Simulate { .. } => {
            let mut formats = formats;
            formats.push(Format::Telemetry);
            emit(&run_trot(&config)?.report, &cli.out, &formats)
        }
        Command::Experiment { id } => {
            let id: ExperimentId = id.parse()?;
            emit(&run_experiment(id, &config)?, &cli.out, &formats)
        }
        Command::FeasibilityMap => {
            let outcome = run_feasibility(&config)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| HarnessError::io(&cli.out, e))?;
            for (g, map) in &outcome.maps {
                let path = cli.out.join(format!("feasibility_gear_{g}.csv"));
                std::fs::write(&path, map.to_csv()).map_err(|e| HarnessError::io(&path, e))?;
                println!("wrote {}", path.display());
            }
            emit(&outcome.report, &cli.out, &formats)
        }
        Command::ExportUrdf => {
            let xml = export_robot_description(&config.morphology, &config.actuator)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| HarnessError::io(&cli.out, e))?;
            let path = cli.out.join("robot.urdf");
            std::fs::write(&path, xml).map_err(|e| HarnessError::io(&path, e))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
