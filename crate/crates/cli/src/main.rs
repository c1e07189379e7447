mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aqimon_core::planner::TrajectoryAlg;
use aqimon_core::sim::Scenario;
use aqimon_core::Error;

use config::RunConfig;

/// Fine-grained air-quality monitoring: simulate fields, fit the hybrid
/// plume/network model, plan selective measurement trajectories, run
/// monitoring sessions and evaluate accuracy/consumption trade-offs.
#[derive(Parser)]
#[command(name = "aqimon", version)]
struct Cli {
    /// JSON run configuration; flags below override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scenario: 2d (single ground layer) or 3d (volume).
    #[arg(long, global = true)]
    scenario: Option<ScenarioArg>,

    /// Grid dims, e.g. 10x10x1 or 8,8,4.
    #[arg(long, global = true)]
    grid: Option<String>,

    /// Hidden-layer width K.
    #[arg(long, global = true)]
    neurons: Option<usize>,

    /// PDT selection threshold in [0, 1].
    #[arg(long, global = true)]
    pdt: Option<f64>,

    /// Low-activity floor delta.
    #[arg(long, global = true)]
    delta: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flight budget, minutes (converted to charges of the endurance).
    #[arg(long = "budget-min", global = true)]
    budget_min: Option<f64>,

    /// Output path (file or directory, command dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgArg {
    PdtGreedy,
    Nearest,
    Sequential,
}

impl From<AlgArg> for TrajectoryAlg {
    fn from(a: AlgArg) -> Self {
        match a {
            AlgArg::PdtGreedy => TrajectoryAlg::PdtGreedy,
            AlgArg::Nearest => TrajectoryAlg::Nearest,
            AlgArg::Sequential => TrajectoryAlg::Sequential,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset, one text file per monitored day.
    Simulate {
        #[arg(long, default_value_t = 5)]
        days: usize,
    },
    /// Fit the hybrid model on a directory of day files.
    Fit {
        /// Directory of day files (.txt/.dat/.csv).
        #[arg(long)]
        data: PathBuf,
    },
    /// Select cubes by PDT and plan a measurement trajectory.
    Plan {
        #[arg(long, value_enum, default_value_t = AlgArg::PdtGreedy)]
        alg: AlgArg,
        /// Use a saved model instead of fitting on a fresh complete pass.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run monitoring cycles, writing one JSON line per cycle.
    Session {
        #[arg(long, default_value_t = 6)]
        cycles: usize,
        /// Multiply the underlying field by --shock-factor at this cycle.
        #[arg(long)]
        shock_cycle: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        shock_factor: f64,
    },
    /// Threshold sweep comparing estimators and trajectory algorithms.
    Eval {
        /// Comma-separated thresholds (default 0,0.1,..,0.9).
        #[arg(long)]
        thresholds: Option<String>,
        /// Extra hidden-layer widths to compare (repeatable).
        #[arg(long = "k")]
        neuron_counts: Vec<usize>,
    },
}

fn build_config(cli: &Cli) -> aqimon_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.scenario {
        cfg.scenario = match s {
            ScenarioArg::TwoD => Scenario::TwoD,
            ScenarioArg::ThreeD => Scenario::ThreeD,
        };
    }
    if let Some(g) = &cli.grid {
        cfg.grid = config::parse_grid(g)?;
    }
    if let Some(k) = cli.neurons {
        cfg.neurons = k;
    }
    if let Some(t) = cli.pdt {
        cfg.threshold = t;
    }
    if let Some(d) = cli.delta {
        cfg.delta = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(min) = cli.budget_min {
        if min <= 0.0 {
            return Err(Error::InvalidGrid(format!("budget {min} min must be positive")));
        }
        cfg.battery.budget_charges = min / cfg.battery.flight_minutes;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> aqimon_core::Result<()> {
    let cfg = build_config(cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Simulate { days } => commands::cmd_simulate(&cfg, *days, out),
        Command::Fit { data } => commands::cmd_fit(&cfg, data, out),
        Command::Plan { alg, model } => {
            commands::cmd_plan(&cfg, (*alg).into(), model.as_deref(), out)
        }
        Command::Session { cycles, shock_cycle, shock_factor } => {
            commands::cmd_session(&cfg, *cycles, *shock_cycle, *shock_factor, out)
        }
        Command::Eval { thresholds, neuron_counts } => {
            commands::cmd_eval(&cfg, thresholds.as_deref(), neuron_counts, out)
        }
    }
}

/// 0 success, 2 input error, 3 infeasible plan, 4 numerical guard.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InsufficientBudget { .. } | Error::EmptySelection => 3,
        Error::ConvexityGuard { .. } | Error::NonFinite(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
