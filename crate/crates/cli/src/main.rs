use clap::{Parser, Subcommand};
use gp3_cli::{json, pipeline, Command, Options, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gp3",
    version,
    about = "Three-body coefficient pipeline for dilute Bose gases"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// INI run configuration; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// wall-time cap per stage in seconds; resolutions are degraded to fit
    #[arg(long)]
    budget: Option<f64>,
    /// output directory (overrides [output] dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Certify the potential (positivity, support, symmetry, smoothness)
    Validate(Common),
    /// Solve for the scattering solution and b_M
    Omega(Common),
    /// b_M, gamma and mu
    Coeffs(Common),
    /// sigma by the Born bracket and the 9-D grid oracle
    Sigma(Common),
    /// Small-coupling sign scan of gamma - mu - sigma
    Scan(Common),
    /// Finite-N torus coefficients and the block identity check
    Torus(Common),
    /// Full coefficient report
    Report(Common),
    /// Print the default configuration
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.cmd {
        Sub::DefaultConfig => {
            print!("{}", RunConfig::default().to_ini());
            return ExitCode::SUCCESS;
        }
        Sub::Validate(c) => (Command::Validate, c),
        Sub::Omega(c) => (Command::Omega, c),
        Sub::Coeffs(c) => (Command::Coeffs, c),
        Sub::Sigma(c) => (Command::Sigma, c),
        Sub::Scan(c) => (Command::Scan, c),
        Sub::Torus(c) => (Command::Torus, c),
        Sub::Report(c) => (Command::Report, c),
    };
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let result = cfg.and_then(|mut cfg| {
        if let Some(o) = common.out {
            cfg.output_dir = o;
        }
        pipeline::run(
            cmd,
            &cfg,
            &Options {
                budget: common.budget,
            },
        )
    });
    match result {
        Ok(out) => {
            println!("{}", out.report.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprint!("{}", json::to_string(&pipeline::error_json(Some(cmd), &e)));
            ExitCode::FAILURE
        }
    }
}
