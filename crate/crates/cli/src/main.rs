//! `kpcert` — coupled robustness certification for heatmap keypoint
//! detectors.
//!
//! Exit codes: 0 = robust (or success for non-verdict commands), 1 =
//! counterexample found, 2 = inconclusive, 64 = input error. Set
//! `KPCERT_LOG` (error/warn/info/debug/trace) to control logging.

use clap::{Parser, Subcommand, ValueEnum};
use kpcert_cli::{
    batch_dir, emit_report, exit_code_for, export_lp_file, make_instance, oracle_file,
    verify_file, BatchOptions, OracleChoice, VerifyFileOptions, EXIT_INPUT_ERROR,
};
use kpcert_core::geometry::HullMode;
use kpcert_core::reach::ReachMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kpcert",
    version,
    about = "Certify coupled keypoint robustness over zonotope reachable sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    /// Integer-deviation enumeration with per-deviation LPs.
    Enum,
    /// Uniform random coefficient sampling.
    Sample,
    /// Regular coefficient grid sweep.
    Grid,
}

impl From<OracleArg> for OracleChoice {
    fn from(value: OracleArg) -> Self {
        match value {
            OracleArg::Enum => OracleChoice::Enum,
            OracleArg::Sample => OracleChoice::Sample,
            OracleArg::Grid => OracleChoice::Grid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReachArg {
    /// Zonotope transformer (affine-exact, tighter).
    Zonotope,
    /// Interval-only propagation (cheaper, looser).
    Interval,
}

impl From<ReachArg> for ReachMode {
    fn from(value: ReachArg) -> Self {
        match value {
            ReachArg::Zonotope => ReachMode::Zonotope,
            ReachArg::Interval => ReachMode::Interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HullArg {
    /// One generator per non-seed image (exact for two images).
    BaseVertex,
    /// Entry-wise interval hull (looser, axis-aligned).
    Interval,
}

impl From<HullArg> for HullMode {
    fn from(value: HullArg) -> Self {
        match value {
            HullArg::BaseVertex => HullMode::BaseVertex,
            HullArg::Interval => HullMode::Interval,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify one instance file; exits 0/1/2 by verdict.
    Verify {
        /// Instance JSON path.
        instance: PathBuf,
        /// Disable dominance pruning.
        #[arg(long)]
        no_prune: bool,
        /// Cross-check the verdict with an oracle and embed its report.
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
        /// Seed for stochastic oracles.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw count for the sampling oracle.
        #[arg(long, default_value_t = 100)]
        sample_n: u64,
        /// Step for the grid oracle.
        #[arg(long, default_value_t = 1e-3)]
        grid_step: f64,
        /// Warn on unknown instance keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify every .json instance in a directory and report rates.
    Batch {
        /// Directory of instance files.
        dir: PathBuf,
        /// Parallel worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Samples per instance for the empirical verified rate.
        #[arg(long, default_value_t = 100)]
        empirical_n: u64,
        /// Base seed; instance i uses an independent derived stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Disable dominance pruning.
        #[arg(long)]
        no_prune: bool,
        /// Warn on unknown instance keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an instance file from a backbone, a deviation spec and images.
    MakeInstance {
        /// Backbone network JSON.
        network: PathBuf,
        /// Deviation spec JSON (ground truth + polytope + constants).
        spec: PathBuf,
        /// Images; the first is the seed, the rest span the hull.
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Hull over-approximation mode.
        #[arg(long, value_enum, default_value_t = HullArg::BaseVertex)]
        hull: HullArg,
        /// Set propagation through the backbone.
        #[arg(long, value_enum, default_value_t = ReachArg::Zonotope)]
        reach: ReachArg,
        /// Output instance path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a falsification oracle on an instance file.
    Oracle {
        /// Instance JSON path.
        instance: PathBuf,
        /// Which oracle to run.
        #[arg(long, value_enum)]
        method: OracleArg,
        /// Draw count for the sampling oracle.
        #[arg(long, default_value_t = 100)]
        n: u64,
        /// Seed for the sampling oracle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step for the grid oracle.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Warn on unknown instance keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the assembled program as stable plain text.
    ExportLp {
        /// Instance JSON path.
        instance: PathBuf,
        /// Disable dominance pruning.
        #[arg(long)]
        no_prune: bool,
        /// Warn on unknown instance keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
        /// Write the dump here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, kpcert_core::Error> {
    match cli.command {
        Command::Verify {
            instance,
            no_prune,
            oracle,
            seed,
            sample_n,
            grid_step,
            lenient,
            out,
        } => {
            let opts = VerifyFileOptions {
                pruning: !no_prune,
                strict: !lenient,
                oracle: oracle.map(Into::into),
                seed,
                sample_n,
                grid_step,
            };
            let report = verify_file(&instance, &opts)?;
            for warning in &report.warnings {
                log::warn!("{warning}");
            }
            emit_report(&report, out.as_deref())?;
            Ok(exit_code_for(report.status))
        }
        Command::Batch {
            dir,
            jobs,
            empirical_n,
            seed,
            no_prune,
            lenient,
            out,
        } => {
            let report = batch_dir(
                &dir,
                &BatchOptions {
                    jobs,
                    empirical_n,
                    seed,
                    pruning: !no_prune,
                    strict: !lenient,
                },
            )?;
            emit_report(&report, out.as_deref())?;
            Ok(0)
        }
        Command::MakeInstance {
            network,
            spec,
            images,
            hull,
            reach,
            out,
        } => {
            make_instance(&network, &spec, &images, hull.into(), reach.into(), &out)?;
            log::info!("wrote {}", out.display());
            Ok(0)
        }
        Command::Oracle {
            instance,
            method,
            n,
            seed,
            step,
            lenient,
            out,
        } => {
            let opts = VerifyFileOptions {
                strict: !lenient,
                seed,
                sample_n: n,
                grid_step: step,
                ..VerifyFileOptions::default()
            };
            let report = oracle_file(&instance, method.into(), &opts)?;
            let found = report.found();
            emit_report(&report, out.as_deref())?;
            Ok(if found { 1 } else { 0 })
        }
        Command::ExportLp {
            instance,
            no_prune,
            lenient,
            out,
        } => {
            let text = export_lp_file(&instance, !no_prune, !lenient)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KPCERT_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT_ERROR as u8)
        }
    }
}
