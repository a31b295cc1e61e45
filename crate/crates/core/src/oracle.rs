//! Independent falsification oracles for cross-checking verdicts.
//!
//! Three methods, all structurally independent of the branch-and-bound path
//! (no binaries, no Big-M, no pruning):
//!
//! - [`enumerate_falsify`]: enumerate every integer deviation in the
//!   image-bound box that leaves the polytope, and ask one pure LP per
//!   deviation whether some reachable heatmap realizes it as a (non-strict)
//!   per-channel maximum.
//! - [`sample_falsify`]: draw coefficient vectors uniformly, decode each
//!   sampled heatmap with adversarial tie-breaking, and test the resulting
//!   joint deviations against the polytope.
//! - [`grid_falsify`]: the same decode over a regular coefficient grid.
//!
//! A solver verdict of `Robust` must never coexist with an oracle witness;
//! the test suites enforce both that one-sided property and full agreement
//! with enumeration on instances small enough to enumerate.

use crate::encode::validate_heatmaps;
use crate::fixtures::split_seed;
use crate::lp::{self, LinRow, LpConfig, LpStatus, Relation};
use crate::problem::{deviation_box, in_bound_sets, ProblemInstance};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Default cap on the number of integer deviations [`enumerate_falsify`]
/// will walk.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

/// How an oracle searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    /// Integer-deviation enumeration with per-deviation LPs.
    Enumeration,
    /// Uniform random coefficient sampling.
    Sampling,
    /// Regular coefficient grid sweep.
    AlphaGrid,
}

/// What an oracle concluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleOutcome {
    /// A falsifying witness was found.
    CounterexampleFound,
    /// The search space was exhausted without a witness.
    NoneFound,
}

/// A falsifying witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleWitness {
    /// Joint integer deviation that leaves the polytope.
    pub deviation: Vec<i64>,
    /// Generator coefficients realizing it (empty for singleton sets).
    pub alpha: Vec<f64>,
    /// 1-based facets strictly violated by the deviation.
    pub violated_facets: Vec<usize>,
}

/// Oracle result with effort counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Which oracle ran.
    pub method: OracleMethod,
    /// Found / none found.
    pub outcome: OracleOutcome,
    /// Present iff `outcome == CounterexampleFound`.
    pub witness: Option<OracleWitness>,
    /// Integer deviations examined (enumeration) — zero for the others.
    pub assignments_tried: u64,
    /// LP solves performed (enumeration) — zero for the others.
    pub lp_calls: u64,
    /// Coefficient vectors evaluated (sampling and grid).
    pub samples_drawn: u64,
    /// Seed used by the sampling oracle, recorded for reproducibility.
    pub seed: Option<u64>,
}

impl OracleReport {
    fn empty(method: OracleMethod) -> Self {
        Self {
            method,
            outcome: OracleOutcome::NoneFound,
            witness: None,
            assignments_tried: 0,
            lp_calls: 0,
            samples_drawn: 0,
            seed: None,
        }
    }

    /// Whether a witness was found.
    pub fn found(&self) -> bool {
        self.outcome == OracleOutcome::CounterexampleFound
    }
}

/// Exhaustive falsification: for every integer deviation in the image-bound
/// box that strictly violates some facet (checked directly against the raw
/// polytope), solve one LP asking whether coefficients exist that make every
/// keypoint's deviated pixel a non-strict maximum over that channel's
/// (unpruned) in-bound pixels. Deviations are visited lexicographically, so
/// the reported witness is the lexicographically least feasible one.
pub fn enumerate_falsify(
    inst: &ProblemInstance,
    lp_cfg: &LpConfig,
    cap: u128,
) -> Result<OracleReport> {
    let dev_box = deviation_box(inst);
    let size = dev_box.num_points();
    if size > cap {
        return Err(Error::EnumerationTooLarge { size, cap });
    }
    let in_bound = in_bound_sets(inst, lp_cfg)?;
    let mut report = OracleReport::empty(OracleMethod::Enumeration);
    let poly = inst.deviation_polytope();
    for point in dev_box.iter_points() {
        report.assignments_tried += 1;
        let violated = poly.violated_facets_int(&point);
        if violated.is_empty() {
            continue;
        }
        report.lp_calls += 1;
        if let Some(alpha) = deviated_peak_lp(inst, &in_bound, &point, lp_cfg)? {
            report.outcome = OracleOutcome::CounterexampleFound;
            report.witness = Some(OracleWitness {
                deviation: point,
                alpha,
                violated_facets: violated,
            });
            break;
        }
    }
    Ok(report)
}

/// The pure LP behind [`enumerate_falsify`]: variables are the coefficients,
/// the heatmap values at each keypoint's deviated pixel and at every
/// in-bound pixel, and one selected value per channel. Feasibility means the
/// fixed deviation is realizable as a per-channel (non-strict) argmax.
fn deviated_peak_lp(
    inst: &ProblemInstance,
    in_bound: &[Vec<usize>],
    deviation: &[i64],
    lp_cfg: &LpConfig,
) -> Result<Option<Vec<f64>>> {
    let k = inst.num_keypoints();
    let m = inst.reach_set().num_generators();
    let center = inst.reach_set().center();
    let gens = inst.reach_set().generators();

    // Variable layout: alpha (m) | per channel: fixed-and-in-bound heat
    // values | peak per channel.
    let mut p = lp::LpProblem::new(m);
    for g in 0..m {
        p.lower[g] = -1.0;
        p.upper[g] = 1.0;
    }
    let mut heat_var = vec![std::collections::BTreeMap::<usize, usize>::new(); k];
    for i in 1..=k {
        let (gr, gc) = inst.keypoint(i);
        let fixed = ((gr + deviation[2 * i - 2] - 1) as usize) * inst.width()
            + (gc + deviation[2 * i - 1]) as usize;
        let mut locations: Vec<usize> = in_bound[i - 1].clone();
        locations.push(fixed);
        locations.sort_unstable();
        locations.dedup();
        for j in locations {
            let id = p.num_vars;
            p.num_vars += 1;
            p.lower.push(f64::NEG_INFINITY);
            p.upper.push(f64::INFINITY);
            heat_var[i - 1].insert(j, id);
            // Heat value definition row.
            let mut coeffs = vec![(id, 1.0)];
            for (g, gen) in gens.iter().enumerate() {
                let c = gen.get(j, i);
                if c != 0.0 {
                    coeffs.push((g, -c));
                }
            }
            p.rows.push(LinRow {
                coeffs,
                rel: Relation::Eq,
                rhs: center.get(j, i),
            });
        }
    }
    for i in 1..=k {
        let (gr, gc) = inst.keypoint(i);
        let fixed = ((gr + deviation[2 * i - 2] - 1) as usize) * inst.width()
            + (gc + deviation[2 * i - 1]) as usize;
        let peak = p.num_vars;
        p.num_vars += 1;
        p.lower.push(f64::NEG_INFINITY);
        p.upper.push(f64::INFINITY);
        p.rows.push(LinRow {
            coeffs: vec![(peak, 1.0), (heat_var[i - 1][&fixed], -1.0)],
            rel: Relation::Eq,
            rhs: 0.0,
        });
        for &j in &in_bound[i - 1] {
            p.rows.push(LinRow {
                coeffs: vec![(peak, 1.0), (heat_var[i - 1][&j], -1.0)],
                rel: Relation::Ge,
                rhs: 0.0,
            });
        }
    }

    let out = lp::solve(&p, lp_cfg);
    match out.status {
        LpStatus::Optimal => {
            let x = out.point.expect("optimal lp carries a point");
            Ok(Some(x[..m].iter().map(|a| a.clamp(-1.0, 1.0)).collect()))
        }
        LpStatus::Infeasible => Ok(None),
        other => Err(Error::LpFailure(format!(
            "oracle lp returned {other:?} for deviation {deviation:?}"
        ))),
    }
}

/// Evaluate one coefficient vector: decode with adversarial exact-tie
/// argmax and test the polytope.
fn falsifies_at(inst: &ProblemInstance, alpha: &[f64]) -> Option<OracleWitness> {
    let z = inst.reach_set().sample(alpha).expect("alpha within range");
    let report = validate_heatmaps(inst, &z, 0.0, None);
    if report.valid {
        let selection = report.selection.expect("valid report carries a selection");
        let mut deviation = Vec::with_capacity(2 * inst.num_keypoints());
        for (i, &j) in selection.iter().enumerate() {
            let (row, col) = z.coords_of(j);
            let (gr, gc) = inst.keypoint(i + 1);
            deviation.push(row as i64 - gr);
            deviation.push(col as i64 - gc);
        }
        Some(OracleWitness {
            deviation,
            alpha: alpha.to_vec(),
            violated_facets: report.violated_facets,
        })
    } else {
        None
    }
}

/// Sampling falsification: `n` coefficient vectors drawn uniformly from
/// `[-1, 1]^m` under a seeded stream. Singleton sets are evaluated once.
pub fn sample_falsify(inst: &ProblemInstance, n: u64, seed: u64) -> OracleReport {
    let m = inst.reach_set().num_generators();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::empty(OracleMethod::Sampling);
    report.seed = Some(seed);
    let draws = if m == 0 { 1 } else { n };
    for _ in 0..draws {
        let alpha: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        report.samples_drawn += 1;
        if let Some(witness) = falsifies_at(inst, &alpha) {
            report.outcome = OracleOutcome::CounterexampleFound;
            report.witness = Some(witness);
            break;
        }
    }
    report
}

/// Grid falsification: sweep `[-1, 1]^m` with the given step (endpoints
/// included). Refuses grids beyond ten million points.
pub fn grid_falsify(inst: &ProblemInstance, step: f64) -> Result<OracleReport> {
    // NaN steps must land in the error branch, hence the negation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(step > 0.0) {
        return Err(Error::Invalid {
            kind: "grid",
            reason: format!("step must be positive, got {step}"),
        });
    }
    let m = inst.reach_set().num_generators();
    let per_axis = ((2.0 / step).ceil() as u128) + 1;
    let total = per_axis.checked_pow(m as u32).unwrap_or(u128::MAX);
    if total > 10_000_000 {
        return Err(Error::EnumerationTooLarge {
            size: total,
            cap: 10_000_000,
        });
    }
    let axis: Vec<f64> = (0..per_axis)
        .map(|q| (-1.0 + q as f64 * step).min(1.0))
        .collect();
    let mut report = OracleReport::empty(OracleMethod::AlphaGrid);
    let mut cursor = vec![0usize; m];
    loop {
        let alpha: Vec<f64> = cursor.iter().map(|&c| axis[c]).collect();
        report.samples_drawn += 1;
        if let Some(witness) = falsifies_at(inst, &alpha) {
            report.outcome = OracleOutcome::CounterexampleFound;
            report.witness = Some(witness);
            break;
        }
        // Odometer over the axes; singleton sets run the zero-length cursor
        // exactly once.
        let mut t = m;
        loop {
            if t == 0 {
                return Ok(report);
            }
            t -= 1;
            if cursor[t] + 1 < axis.len() {
                cursor[t] += 1;
                cursor[t + 1..].iter_mut().for_each(|c| *c = 0);
                break;
            }
        }
    }
    Ok(report)
}

/// Per-instance empirical robustness over a batch: an instance counts as
/// empirically robust when [`sample_falsify`] finds nothing in `n` draws.
/// Instance `idx` uses the derived stream `split_seed(seed, idx)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalReport {
    /// Fraction of instances with no sampled violation.
    pub rate: f64,
    /// Per-instance outcome, `true` = no violation found.
    pub per_instance: Vec<bool>,
}

/// Sampling-based empirical verified rate over a batch of instances.
pub fn empirical_verified(batch: &[ProblemInstance], n: u64, seed: u64) -> EmpiricalReport {
    let per_instance: Vec<bool> = batch
        .iter()
        .enumerate()
        .map(|(idx, inst)| !sample_falsify(inst, n, split_seed(seed, idx as u64)).found())
        .collect();
    let robust = per_instance.iter().filter(|&&b| b).count();
    EmpiricalReport {
        rate: if batch.is_empty() {
            0.0
        } else {
            robust as f64 / batch.len() as f64
        },
        per_instance,
    }
}
