use std::path::PathBuf;
use std::process::ExitCode;

use behavioral_cli::commands::{counterexamples, deepc, hankel, moments, ocp, simulate, stochastic};
use behavioral_cli::config::{load, CommandConfig, Tolerances};
use behavioral_cli::io::write_json;
use behavioral_cli::report::{OutputDir, Report};
use behavioral_cli::Result;
use clap::{Args, Parser, Subcommand};

/// Numerical experiments on behaviors, path measures and occupation LPs.
///
/// Each subcommand prints a JSON report on stdout. Exit status is 0 when all
/// checks pass, 1 when a check fails and 2 on errors.
#[derive(Parser)]
#[command(name = "bmeas", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration for the subcommand; missing fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for report.json and CSV outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    #[arg(long, global = true)]
    tol_membership: Option<f64>,
    #[arg(long, global = true)]
    tol_duality: Option<f64>,
    #[arg(long, global = true)]
    tol_slack: Option<f64>,
    #[arg(long, global = true)]
    tol_moment: Option<f64>,
    #[arg(long, global = true)]
    tol_kernel: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a system and write its trajectory.
    Simulate,
    /// Build a Hankel matrix from simulated data and test the behavior identities.
    HankelValidate,
    /// Solve a gridded optimal control problem by dynamic programming and LP.
    OcpSolve,
    /// Check moment identities for random measures on a polynomial system.
    Moments,
    /// Point and distributional predictive control from a Hankel matrix.
    Deepc {
        /// Matrix CSV of the Hankel matrix.
        #[arg(long)]
        hankel: Option<PathBuf>,
        #[arg(long)]
        depth: Option<usize>,
        /// Matrix CSV with the reference window.
        #[arg(long)]
        w_ref: Option<PathBuf>,
        /// Matrix CSV with the cost weight.
        #[arg(long)]
        weight: Option<PathBuf>,
        /// Matrix CSV with one coefficient vector per row.
        #[arg(long)]
        atoms: Option<PathBuf>,
        /// JSON list of expectation constraints.
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// Evaluate the reference counterexamples.
    Counterexamples,
    /// Check path measures against finite kernels.
    StochasticCheck {
        /// JSON kernel table.
        #[arg(long, requires = "measure")]
        kernels: Option<PathBuf>,
        /// JSON path measure.
        #[arg(long, requires = "kernels")]
        measure: Option<PathBuf>,
    },
}

fn prepare<C: CommandConfig>(g: &Global) -> Result<C> {
    let mut cfg: C = load(g.config.as_ref())?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.apply_tolerances(&Tolerances {
        rank: g.tol_rank,
        membership: g.tol_membership,
        duality: g.tol_duality,
        slack: g.tol_slack,
        moment: g.tol_moment,
        kernel: g.tol_kernel,
    });
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<Report> {
    let g = &cli.global;
    let mut out = OutputDir::new(g.out.clone())?;
    let report = match cli.command {
        Command::Simulate => simulate::run(&prepare(g)?, &mut out)?,
        Command::HankelValidate => hankel::run(&prepare(g)?, &mut out)?,
        Command::OcpSolve => ocp::run(&prepare(g)?, &mut out)?,
        Command::Moments => moments::run(&prepare(g)?, &mut out)?,
        Command::Deepc {
            hankel,
            depth,
            w_ref,
            weight,
            atoms,
            constraints,
        } => {
            let mut cfg: deepc::DeepcConfig = prepare(g)?;
            cfg.hankel = hankel.or(cfg.hankel);
            cfg.depth = depth.unwrap_or(cfg.depth);
            cfg.w_ref = w_ref.or(cfg.w_ref);
            cfg.weight = weight.or(cfg.weight);
            cfg.atoms = atoms.or(cfg.atoms);
            cfg.constraints = constraints.or(cfg.constraints);
            deepc::run(&cfg, &mut out)?
        }
        Command::Counterexamples => counterexamples::run(&prepare(g)?, &mut out)?,
        Command::StochasticCheck { kernels, measure } => {
            let mut cfg: stochastic::StochasticConfig = prepare(g)?;
            cfg.kernels = kernels.or(cfg.kernels);
            cfg.measure = measure.or(cfg.measure);
            stochastic::run(&cfg, &mut out)?
        }
    };
    if let Some(dir) = out.dir() {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(report) => {
            println!("{}", report.to_json());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                for c in report.failed_checks() {
                    eprintln!("check failed: {} = {:e} (want {} {:e})", c.name, c.value, c.relation, c.limit);
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
