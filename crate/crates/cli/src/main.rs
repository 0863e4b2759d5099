use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use derfdd_core::config::RunConfig;
use derfdd_core::pipeline::{self, Model, PlotRequest};

#[derive(Parser)]
#[command(name = "derfdd", version, about = "Grid fault diagnosis and fault-tolerant inverter control")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from a named preset (`default` or `desk`) when no config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a schedule under the conventional controller.
    Simulate {
        /// Built-in schedule name or schedule file; defaults to the training schedule.
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Record the training dataset.
    GenDataset,
    /// Train one model, or all three.
    Train {
        #[arg(value_enum, default_value_t = Which::All)]
        which: Which,
    },
    /// Confusion matrix on held-out windows and the per-episode MAE table.
    Eval,
    /// Run the test schedules with the trained models in the loop.
    RunFtc,
    /// Write per-phase SVG plots of a closed-loop trace.
    Plot {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Start time in seconds; defaults to the first fault onset.
        #[arg(long)]
        start: Option<f64>,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        segment: u32,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Lstm,
    Knn,
    Mlp,
    All,
}

fn load(cli: &Cli) -> derfdd_core::Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> derfdd_core::Result<()> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Simulate { schedule } => println!("{}", pipeline::simulate(&cfg, schedule.as_deref())?),
        Command::GenDataset => println!("{}", pipeline::gen_dataset(&cfg)?),
        Command::Train { which } => {
            let models: &[Model] = match which {
                Which::Lstm => &[Model::Lstm],
                Which::Knn => &[Model::Knn],
                Which::Mlp => &[Model::Mlp],
                Which::All => &Model::ALL,
            };
            for &m in models {
                println!("{}", pipeline::train(&cfg, m)?);
            }
        }
        Command::Eval => println!("{}", pipeline::eval_command(&cfg)?),
        Command::RunFtc => println!("{}", pipeline::run_ftc_command(&cfg)?),
        Command::Plot { trace, start, samples, segment } => {
            let req = PlotRequest { trace: trace.clone(), start: *start, samples: *samples, segment: *segment };
            println!("{}", pipeline::plot(&cfg, &req)?);
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
