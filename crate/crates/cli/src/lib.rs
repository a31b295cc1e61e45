//! Library half of the `kpcert` command-line tool: file-driven verification,
//! the batch harness with verified-rate accounting, oracle runs, instance
//! assembly and model export. The binary in `main.rs` is a thin argument
//! layer over these functions so the test suites can drive them directly.

use kpcert_core::encode::ChannelArgmax;
use kpcert_core::fileio;
use kpcert_core::fixtures::split_seed;
use kpcert_core::geometry::HullMode;
use kpcert_core::milp::{self, LimitReason, SearchStats, VerdictStatus, VerifyOptions};
use kpcert_core::oracle::{self, OracleReport};
use kpcert_core::problem::ProblemInstance;
use kpcert_core::reach;
use kpcert_core::Result;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Report schema version; bump on breaking layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Tool version baked into every report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which oracle to run alongside verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleChoice {
    /// Integer-deviation enumeration.
    Enum,
    /// Uniform coefficient sampling.
    Sample,
    /// Regular coefficient grid.
    Grid,
}

/// Options for [`verify_file`].
#[derive(Debug, Clone)]
pub struct VerifyFileOptions {
    /// Dominance pruning (on by default; `--no-prune` clears it).
    pub pruning: bool,
    /// Reject unknown keys in the instance file.
    pub strict: bool,
    /// Optional cross-check oracle.
    pub oracle: Option<OracleChoice>,
    /// Seed for stochastic oracles.
    pub seed: u64,
    /// Draw count for the sampling oracle.
    pub sample_n: u64,
    /// Step for the grid oracle.
    pub grid_step: f64,
}

impl Default for VerifyFileOptions {
    fn default() -> Self {
        Self {
            pruning: true,
            strict: true,
            oracle: None,
            seed: 0,
            sample_n: 100,
            grid_step: 1e-3,
        }
    }
}

/// Counterexample section of a verdict report.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    /// Generator coefficients.
    pub alpha: Vec<f64>,
    /// Joint integer deviation.
    pub deviation: Vec<i64>,
    /// Facet indicator values.
    pub facet_flags: Vec<u8>,
    /// Perturbed `(row, col)` per keypoint.
    pub perturbed_coords: Vec<(i64, i64)>,
    /// Per-channel maxima and attaining pixels of the reconstruction.
    pub argmax: Vec<ChannelArgmax>,
    /// Facets strictly violated by the validated selection.
    pub violated_facets: Vec<usize>,
    /// Whether adversarial validation succeeded.
    pub validated: bool,
}

/// Machine-readable verdict document.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    /// Layout version.
    pub schema_version: u32,
    /// Tool version.
    pub tool_version: String,
    /// Instance path as given.
    pub instance: String,
    /// robust / unknown / inconclusive.
    pub status: VerdictStatus,
    /// Present when inconclusive.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<LimitReason>,
    /// Search counters.
    pub stats: SearchStats,
    /// Pruning setting used.
    pub pruning: bool,
    /// Seed driving stochastic oracles.
    pub seed: u64,
    /// Lenient-parse warnings, if any.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Present when the verdict is unknown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleReport>,
    /// Present when an oracle cross-check was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
    /// True when the oracle outcome contradicts the verdict (a found witness
    /// against a robust verdict); always worth a bug report.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub oracle_disagrees: bool,
}

/// Exit code for a verdict: 0 robust, 1 unknown, 2 inconclusive.
pub fn exit_code_for(status: VerdictStatus) -> i32 {
    match status {
        VerdictStatus::Robust => 0,
        VerdictStatus::Unknown => 1,
        VerdictStatus::Inconclusive => 2,
    }
}

/// Exit code for input, parse and instance-validation failures.
pub const EXIT_INPUT_ERROR: i32 = 64;

fn run_oracle(
    inst: &ProblemInstance,
    choice: OracleChoice,
    opts: &VerifyFileOptions,
) -> Result<OracleReport> {
    match choice {
        OracleChoice::Enum => oracle::enumerate_falsify(
            inst,
            &milp::VerifyOptions::default().tols.lp,
            oracle::DEFAULT_ENUM_CAP,
        ),
        OracleChoice::Sample => Ok(oracle::sample_falsify(inst, opts.sample_n, opts.seed)),
        OracleChoice::Grid => oracle::grid_falsify(inst, opts.grid_step),
    }
}

/// Verify one instance file and assemble its report.
pub fn verify_file(path: &Path, opts: &VerifyFileOptions) -> Result<VerdictReport> {
    let (inst, warnings) = fileio::load_instance(path, opts.strict)?;
    let verify_opts = VerifyOptions {
        pruning: opts.pruning,
        ..VerifyOptions::default()
    };
    let verdict = milp::verify(&inst, &verify_opts)?;
    let counterexample = verdict.counterexample.as_ref().map(|cex| CounterexampleReport {
        alpha: cex.alpha.clone(),
        deviation: cex.deviation.clone(),
        facet_flags: cex.facet_flags.clone(),
        perturbed_coords: cex.perturbed_coords.clone(),
        argmax: cex.report.per_channel.clone(),
        violated_facets: cex.report.violated_facets.clone(),
        validated: cex.validated,
    });
    let oracle_report = match opts.oracle {
        Some(choice) => Some(run_oracle(&inst, choice, opts)?),
        None => None,
    };
    let oracle_disagrees = matches!(&oracle_report, Some(r) if r.found())
        && verdict.status == VerdictStatus::Robust;
    Ok(VerdictReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        instance: path.display().to_string(),
        status: verdict.status,
        reason: verdict.reason,
        stats: verdict.stats,
        pruning: opts.pruning,
        seed: opts.seed,
        warnings,
        counterexample,
        oracle: oracle_report,
        oracle_disagrees,
    })
}

/// Options for [`batch_dir`].
#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Worker threads.
    pub jobs: usize,
    /// Samples per instance for the empirical rate.
    pub empirical_n: u64,
    /// Base seed; instance `idx` uses `split_seed(seed, idx)`.
    pub seed: u64,
    /// Dominance pruning.
    pub pruning: bool,
    /// Strict instance parsing.
    pub strict: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            empirical_n: 100,
            seed: 0,
            pruning: true,
            strict: true,
        }
    }
}

/// One batch row.
#[derive(Debug, Clone, Serialize)]
pub struct BatchEntry {
    /// File name relative to the batch directory.
    pub file: String,
    /// Verdict, absent when the file failed to load or verify.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<VerdictStatus>,
    /// Load/verify error message, when any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Whether the clean center prediction satisfies the polytope (the
    /// verified-rate denominator membership test).
    pub clean_in_bound: bool,
    /// Whether sampling found no violation.
    pub empirically_robust: bool,
    /// Verification wall time.
    pub wall_time_s: f64,
}

/// A ratio with explicit numerator and denominator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rate {
    /// Count of successes.
    pub numerator: usize,
    /// Count of eligible instances.
    pub denominator: usize,
    /// `numerator / denominator`, 0 when the denominator is 0.
    pub rate: f64,
}

impl Rate {
    fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
            rate: if denominator == 0 {
                0.0
            } else {
                numerator as f64 / denominator as f64
            },
        }
    }
}

/// Aggregate batch document.
#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    /// Layout version.
    pub schema_version: u32,
    /// Tool version.
    pub tool_version: String,
    /// Base seed.
    pub seed: u64,
    /// Samples per instance for the empirical rate.
    pub empirical_n: u64,
    /// Per-instance rows, in directory order.
    pub instances: Vec<BatchEntry>,
    /// Certified-robust count over instances whose clean prediction is
    /// in-bound.
    pub verified_rate: Rate,
    /// Sampling-clean count over the same denominator; an upper bound on
    /// the verified rate up to sampling error.
    pub empirical_verified_rate: Rate,
    /// Mean verification wall time (seconds) over verified instances.
    pub wall_time_mean_s: f64,
    /// Population standard deviation of the wall time.
    pub wall_time_std_s: f64,
}

/// Run every `*.json` instance in a directory (sorted by file name),
/// optionally in parallel, and aggregate verdicts, the verified rate, the
/// sampling-based empirical rate, and wall-time statistics. Per-file errors
/// are isolated into their rows; the batch continues.
pub fn batch_dir(dir: &Path, opts: &BatchOptions) -> Result<BatchReport> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(kpcert_core::Error::Invalid {
            kind: "batch",
            reason: format!("no .json instance files in {}", dir.display()),
        });
    }

    let verify_opts = VerifyOptions {
        pruning: opts.pruning,
        ..VerifyOptions::default()
    };
    let entries: Mutex<Vec<Option<BatchEntry>>> = Mutex::new(vec![None; files.len()]);
    let next: AtomicUsize = AtomicUsize::new(0);
    let worker = |_worker_id: usize| loop {
        let idx = next.fetch_add(1, Ordering::SeqCst);
        if idx >= files.len() {
            break;
        }
        let path = &files[idx];
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let entry = match fileio::load_instance(path, opts.strict) {
            Err(e) => BatchEntry {
                file: name,
                status: None,
                error: Some(e.to_string()),
                clean_in_bound: false,
                empirically_robust: false,
                wall_time_s: 0.0,
            },
            Ok((inst, _)) => {
                let clean_in_bound = inst.clean_prediction_in_bound();
                let empirically_robust = !oracle::sample_falsify(
                    &inst,
                    opts.empirical_n,
                    split_seed(opts.seed, idx as u64),
                )
                .found();
                match milp::verify(&inst, &verify_opts) {
                    Ok(verdict) => BatchEntry {
                        file: name,
                        status: Some(verdict.status),
                        error: None,
                        clean_in_bound,
                        empirically_robust,
                        wall_time_s: verdict.stats.wall_time_s,
                    },
                    Err(e) => BatchEntry {
                        file: name,
                        status: None,
                        error: Some(e.to_string()),
                        clean_in_bound,
                        empirically_robust,
                        wall_time_s: 0.0,
                    },
                }
            }
        };
        entries.lock().expect("entry lock")[idx] = Some(entry);
    };

    let jobs = opts.jobs.max(1).min(files.len());
    if jobs <= 1 {
        worker(0);
    } else {
        std::thread::scope(|scope| {
            for w in 0..jobs {
                scope.spawn(move || worker(w));
            }
        });
    }

    let instances: Vec<BatchEntry> = entries
        .into_inner()
        .expect("entry lock")
        .into_iter()
        .map(|e| e.expect("all rows filled"))
        .collect();

    let eligible = instances
        .iter()
        .filter(|e| e.error.is_none() && e.clean_in_bound)
        .count();
    let robust = instances
        .iter()
        .filter(|e| e.error.is_none() && e.clean_in_bound)
        .filter(|e| e.status == Some(VerdictStatus::Robust))
        .count();
    let empirically_robust = instances
        .iter()
        .filter(|e| e.error.is_none() && e.clean_in_bound)
        .filter(|e| e.empirically_robust)
        .count();
    let times: Vec<f64> = instances
        .iter()
        .filter(|e| e.status.is_some())
        .map(|e| e.wall_time_s)
        .collect();
    let mean = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    let std = if times.is_empty() {
        0.0
    } else {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64).sqrt()
    };

    Ok(BatchReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        seed: opts.seed,
        empirical_n: opts.empirical_n,
        instances,
        verified_rate: Rate::new(robust, eligible),
        empirical_verified_rate: Rate::new(empirically_robust, eligible),
        wall_time_mean_s: mean,
        wall_time_std_s: std,
    })
}

/// Assemble an instance from a backbone, a deviation spec, and images (the
/// first image is the seed, the rest span the hull), then write it.
pub fn make_instance(
    network_path: &Path,
    spec_path: &Path,
    image_paths: &[PathBuf],
    hull: HullMode,
    reach_mode: reach::ReachMode,
    out: &Path,
) -> Result<ProblemInstance> {
    let net = fileio::load_network(network_path)?;
    let spec = fileio::load_deviation_spec(spec_path)?;
    if image_paths.is_empty() {
        return Err(kpcert_core::Error::Invalid {
            kind: "images",
            reason: "need at least a seed image".into(),
        });
    }
    let images: Vec<reach::Image> = image_paths
        .iter()
        .map(|p| fileio::load_image(p))
        .collect::<Result<_>>()?;
    let opts = reach::AssemblyOptions {
        epsilon: spec.epsilon,
        limits: spec.limits(),
        hull,
        reach: reach_mode,
    };
    let inst = reach::instance_from_images(
        &net,
        &images[0],
        &images[1..],
        spec.ground_truth.clone(),
        spec.polytope()?,
        &opts,
    )?
    .with_big_m_fallback(spec.big_m);
    fileio::save_instance(out, &inst)?;
    Ok(inst)
}

/// Run a standalone oracle over an instance file.
pub fn oracle_file(
    path: &Path,
    choice: OracleChoice,
    opts: &VerifyFileOptions,
) -> Result<OracleReport> {
    let (inst, _) = fileio::load_instance(path, opts.strict)?;
    run_oracle(&inst, choice, opts)
}

/// Export the assembled falsification program as stable text.
pub fn export_lp_file(path: &Path, pruning: bool, strict: bool) -> Result<String> {
    let (inst, _) = fileio::load_instance(path, strict)?;
    let model = milp::assemble_model(
        &inst,
        &VerifyOptions {
            pruning,
            ..VerifyOptions::default()
        },
    )?;
    Ok(model.export_text())
}

/// Serialize a report as pretty JSON and write it to `--out` or stdout.
pub fn emit_report<T: Serialize>(report: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("reports serialize") + "\n";
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}
