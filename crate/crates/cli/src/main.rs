use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hha_core::harness::{self, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "hha", version, about = "Hybrid hierarchical agent experiments on Mountain Car")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// State-space coverage over a fixed step budget.
    Coverage(RunArgs),
    /// Per-episode reward over a fixed number of episodes.
    Reward(RunArgs),
    /// Fit a model to logged (or freshly generated random) data and report its partition.
    FitDemo(FitArgs),
    /// Print a summary of a model snapshot.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["hha", "hha_no_ig", "random"])]
    mode: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory log to fit; random-control data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Length of the generated random-control data.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
}

#[derive(Args)]
struct InspectArgs {
    snapshot: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Config(e.to_string())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn configure(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = load_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.experiment.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        config.experiment.output_dir = out.clone();
    }
    if let Some(mode) = &args.mode {
        config.experiment.mode = Mode::parse(mode).map_err(|e| Failure::Config(e.to_string()))?;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let run = |e: hha_core::Error| Failure::Run(e.to_string());
    match cli.command {
        Command::Coverage(args) => {
            let config = configure(&args)?;
            let out = harness::run_coverage_experiment(&config).map_err(run)?;
            for s in &out.summary.seeds {
                println!("{} seed {}: coverage {:.4}", config.experiment.mode.name(), s.seed, s.final_coverage);
            }
            println!(
                "best {:.4}, mean {:.4}, std {:.4} -> {}",
                out.summary.coverage.best,
                out.summary.coverage.mean,
                out.summary.coverage.std,
                out.directory.display()
            );
        }
        Command::Reward(args) => {
            let config = configure(&args)?;
            let out = harness::run_reward_experiment(&config).map_err(run)?;
            for s in &out.summary.seeds {
                println!(
                    "{} seed {}: total reward {:.3}, goals {}/{}",
                    config.experiment.mode.name(),
                    s.seed,
                    s.total_reward,
                    s.goals_reached,
                    s.episodes
                );
            }
            println!("results in {}", out.directory.display());
        }
        Command::FitDemo(args) => {
            let config = load_config(args.config.as_ref())?;
            let seed = args.seed.unwrap_or(0);
            let data = match &args.data {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    harness::read_trajectory_csv(&text, &config.env).map_err(|e| Failure::Config(e.to_string()))?
                }
                None => harness::random_rollouts(&config.env, args.steps, seed).map_err(run)?,
            };
            let snapshot = harness::fit_demo(&config, &data, seed).map_err(run)?;
            print!("{}", harness::model_report(&snapshot.params, &snapshot.adjacency));
            for prior in snapshot.control_priors.iter().flatten() {
                println!(
                    "control prior {}: ({}) p = {:.3}{}",
                    prior.mode,
                    prior.point.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
                    prior.attained_probability,
                    if prior.reached { "" } else { " (below threshold)" }
                );
            }
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
                let path = out.join("snapshot.json");
                let json = serde_json::to_string(&snapshot).map_err(|e| Failure::Run(e.to_string()))?;
                std::fs::write(&path, json).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
                println!("snapshot written to {}", path.display());
            }
        }
        Command::Inspect(args) => {
            let config = load_config(args.config.as_ref())?;
            let report = harness::inspect(&args.snapshot, &config.bounds()).map_err(|e| Failure::Config(e.to_string()))?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
