use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use geoworld::config::RunConfig;
use geoworld::figures::{emit_figure_data, FigureKind};
use geoworld::pipeline::{execute, ExperimentPlan, Mode};
use geoworld::Error;

#[derive(Parser)]
#[command(name = "geoworld", version, about = "World models with geometric latent priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Worldmodel,
    Rl,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureArg {
    PassageCircle,
    Torus3d,
    GridPanels,
    GeneralizationCurves,
    RlCurves,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every variant for each seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Worldmodel)]
        mode: ModeArg,
        /// Parallel cells; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output root; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render plot data and an SVG from a finished cell directory.
    Figure {
        #[arg(long)]
        cell: PathBuf,
        #[arg(long, value_enum)]
        kind: FigureArg,
    },
    /// Check a config file and print the resolved configuration.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Io { .. } => ExitCode::from(1),
            _ => ExitCode::from(2),
        }
    })
}

fn seed_offset() -> Result<u64, ExitCode> {
    match std::env::var("GEOWORLD_SEED_OFFSET") {
        Ok(v) => v.trim().parse().map_err(|_| {
            eprintln!("error: GEOWORLD_SEED_OFFSET must be a non-negative integer, got {v:?}");
            ExitCode::from(2)
        }),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}", cfg.to_json().map_err(|_| ExitCode::from(1))?);
            Ok(())
        }
        Command::Figure { cell, kind } => {
            let kind = match kind {
                FigureArg::PassageCircle => FigureKind::PassageCircle,
                FigureArg::Torus3d => FigureKind::Torus3d,
                FigureArg::GridPanels => FigureKind::GridPanels,
                FigureArg::GeneralizationCurves => FigureKind::GeneralizationCurves,
                FigureArg::RlCurves => FigureKind::RlCurves,
            };
            let files = emit_figure_data(&cell, kind).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(1)
            })?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Run {
            config,
            seeds,
            mode,
            jobs,
            out,
        } => {
            let cfg = load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs"));
            let mode = match mode {
                ModeArg::Worldmodel => Mode::WorldModel,
                ModeArg::Rl => Mode::Rl,
                ModeArg::Both => Mode::Both,
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let plan = ExperimentPlan::new(cfg, out, mode, seeds, seed_offset()?).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(2)
            })?;
            let outcomes = execute(&plan, jobs).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(1)
            })?;
            let mut failed = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(_) => println!("ok     {}", o.cell.dir.display()),
                    Err(msg) => {
                        failed += 1;
                        println!("failed {}: {msg}", o.cell.dir.display());
                    }
                }
            }
            println!("summary: {}", plan.out.join("summary.csv").display());
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", outcomes.len());
                return Err(ExitCode::from(1));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
