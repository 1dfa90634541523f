//! `schlab <subcommand> --config <path> [--seed S] [--out DIR] [--threads K]`
//!
//! Exit status: 0 on success, 1 when a check fails, 2 on a configuration
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use schlab_core::harness::{verify_all, Experiment, ExperimentConfig};
use schlab_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Trajectories of the regularized dynamics.
    Simulate,
    /// Spectral algebra and the law of the linear equation.
    LinearCheck,
    /// Mass conservation and coupled contraction.
    Contraction,
    /// Stationarity of the regularized Gibbs measure.
    InvariantCheck,
    /// Reference covariance and weak convergence in `n`.
    MeasuresScan,
    /// Meander and concatenation laws.
    MeanderTest,
    /// Integration-by-parts, generator and symmetry identities.
    IbpVerify,
    /// Penalization mass, contact bounds and the threshold in α.
    ReflectionScan,
    /// Every experiment and one row per acceptance criterion.
    VerifyAll,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        Some(match self {
            Self::Simulate => Experiment::Simulate,
            Self::LinearCheck => Experiment::LinearCheck,
            Self::Contraction => Experiment::Contraction,
            Self::InvariantCheck => Experiment::InvariantCheck,
            Self::MeasuresScan => Experiment::MeasuresScan,
            Self::MeanderTest => Experiment::MeanderTest,
            Self::IbpVerify => Experiment::IbpVerify,
            Self::ReflectionScan => Experiment::ReflectionScan,
            Self::VerifyAll => return None,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "schlab", version, about = "Experiments for the reflected stochastic Cahn-Hilliard equation")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; defaults apply to missing keys or a missing file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "SCHLAB_THREADS")]
    threads: Option<usize>,
    /// Override the ensemble-size multiplier.
    #[arg(long)]
    scale: Option<f64>,
}

fn load(cli: &Cli) -> schlab_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.scale {
        cfg.acceptance.scale = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> schlab_core::Result<bool> {
    match cli.command.experiment() {
        Some(e) => {
            let out = e.run(cfg)?;
            out.report.write(&cfg.output)?;
            for l in &out.report.summary {
                println!("{l}");
            }
            Ok(out.report.passed() && out.criteria.iter().all(|c| c.pass))
        }
        None => {
            let v = verify_all(cfg, &cfg.output)?;
            for l in v.lines() {
                println!("{l}");
            }
            Ok(v.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("schlab: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("schlab: cannot configure {k} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("schlab: some checks failed; see {}", cfg.output.display());
            ExitCode::from(1)
        }
        Err(Error::Config(m)) => {
            eprintln!("schlab: {m}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("schlab: {e}");
            ExitCode::from(1)
        }
    }
}
