//! `dsgd`: command-line runner for decentralized delayed-gradient experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsgd_core::config::{ConfigError, ExperimentConfig};
use dsgd_core::experiment::{self, ExperimentError};
use dsgd_core::network::{metropolis_mixing, validate_mixing, NetworkTopology};
use dsgd_core::solver::SolverError;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "dsgd", version, about = "Decentralized consensus optimization with delayed stochastic gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Target {
    /// experiment config (TOML)
    config: PathBuf,
    /// output directory; overrides the config and the environment
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace.csv and summary.toml
    Run(Target),
    /// Run every cell of the [sweep] grid
    Sweep(Target),
    /// Compare synchronous and asynchronous runs on a virtual wall clock
    Timing(Target),
    /// Check a mixing matrix (symmetry, row sums, sparsity, PSD, lambda)
    Validate {
        /// config whose [network] section defines the graph
        #[arg(long, conflicts_with = "edges", required_unless_present = "edges")]
        config: Option<PathBuf>,
        /// edge-list file: node count on the first line, then `i j` pairs
        #[arg(long)]
        edges: Option<PathBuf>,
        /// use the lazy Metropolis matrix (I + W)/2 for edge lists
        #[arg(long)]
        lazy: bool,
    },
    /// Compute the reference optimum f* only
    Reference {
        config: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Config(_) | ExperimentError::MissingSection(_) => EXIT_CONFIG,
            ExperimentError::Solver(SolverError::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn other(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_FAILURE, message: message.into() }
}

fn output_dir(target: &Target, config: &ExperimentConfig) -> PathBuf {
    target.out.clone().unwrap_or_else(|| config.output_dir())
}

fn cmd_run(target: &Target) -> Result<(), Failure> {
    let config = ExperimentConfig::from_path(&target.config)?;
    let dir = output_dir(target, &config);
    let result = experiment::run_experiment(&config, &dir)?;
    let s = &result.summary;
    println!("eta {}", s.eta);
    println!("lambda {}", s.lambda);
    println!("f_star {}", s.f_star);
    println!("final_gap {}", s.final_gap);
    println!("final_disagreement_y {}", s.final_disagreement_y);
    if let Some(v) = s.slope_disagreement {
        println!("slope_disagreement {v}");
    }
    if let Some(v) = s.slope_gap {
        println!("slope_gap {v}");
    }
    if let Some(v) = s.tomo_relative_error {
        println!("tomo_relative_error {v}");
    }
    for v in &s.verdicts {
        let status = if !v.applicable { "n/a" } else if v.passed { "pass" } else { "FAIL" };
        println!("bound {} {} ({})", v.name, status, v.detail);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(target: &Target) -> Result<(), Failure> {
    let config = ExperimentConfig::from_path(&target.config)?;
    let dir = output_dir(target, &config);
    let outcomes = experiment::run_sweep(&config, &dir)?;
    let mut failed = 0;
    for o in &outcomes {
        let c = &o.cell;
        match &o.result {
            Ok(r) => println!(
                "cell {} delay_max {:?} sigma {} nodes {}: final_gap {} final_disagreement_y {}",
                c.index, c.delay_max, c.sigma, c.nodes, r.summary.final_gap, r.summary.final_disagreement_y
            ),
            Err(e) => {
                failed += 1;
                eprintln!("cell {} failed: {e}", c.index);
            }
        }
    }
    println!("wrote {}", dir.display());
    if failed > 0 {
        return Err(other(format!("{failed} of {} cells failed", outcomes.len())));
    }
    Ok(())
}

fn cmd_timing(target: &Target) -> Result<(), Failure> {
    let config = ExperimentConfig::from_path(&target.config)?;
    let dir = output_dir(target, &config);
    let report = experiment::run_timing(&config, &dir)?;
    println!("eta {}", report.eta);
    print!("{}", report.render());
    println!("wrote {}", dir.join("timing.csv").display());
    Ok(())
}

fn cmd_validate(config: Option<&Path>, edges: Option<&Path>, lazy: bool) -> Result<(), Failure> {
    let (topology, mixing) = match (config, edges) {
        (Some(path), _) => {
            let cfg = ExperimentConfig::from_path(path)?;
            cfg.build_network().map_err(|e| other(e.to_string()))?
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| other(format!("cannot read {}: {e}", path.display())))?;
            let topology = NetworkTopology::from_edge_list(&text).map_err(|e| Failure { code: EXIT_CONFIG, message: e.to_string() })?;
            let mixing = metropolis_mixing(&topology, lazy).map_err(|e| other(e.to_string()))?;
            (topology, mixing)
        }
        (None, None) => return Err(Failure { code: EXIT_CONFIG, message: "give --config or --edges".into() }),
    };
    let report = validate_mixing(&mixing, &topology);
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err(other("mixing matrix failed validation"))
    }
}

fn cmd_reference(path: &Path) -> Result<(), Failure> {
    let config = ExperimentConfig::from_path(path)?;
    let problem = config.build_problem().map_err(|e| other(e.to_string()))?.problem;
    let r = dsgd_core::solver::centralized_reference(&problem, config.solver.reference_tol, config.solver.reference_max_iter);
    println!("f_star {}", r.f_star);
    println!("iterations {}", r.iterations);
    println!("gradient_map_norm {}", r.gradient_map_norm);
    println!("converged {}", r.converged);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(t) => cmd_run(t),
        Command::Sweep(t) => cmd_sweep(t),
        Command::Timing(t) => cmd_timing(t),
        Command::Validate { config, edges, lazy } => cmd_validate(config.as_deref(), edges.as_deref(), *lazy),
        Command::Reference { config } => cmd_reference(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
