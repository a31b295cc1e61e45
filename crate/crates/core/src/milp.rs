//! Depth-first LP-relaxation branch-and-bound over a [`MilpModel`], and the
//! end-to-end `verify` pipeline producing certification verdicts.
//!
//! The search proves infeasibility only when every branch is pruned by an
//! infeasible LP relaxation; resource exhaustion and numerical trouble are
//! surfaced as [`VerdictStatus::Inconclusive`] and are never converted into
//! a robustness claim.

use crate::encode::{self, Counterexample, MilpModel};
use crate::lp::{self, LpConfig, LpStatus};
use crate::problem::{
    self, big_m_vector, deviation_box, in_bound_sets, prune_index_sets, unpruned_index_sets,
    ProblemInstance, SolverLimits,
};
use crate::Result;
use serde::Serialize;
use std::time::Instant;

/// Why a search stopped without an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum LimitReason {
    /// Node budget exhausted.
    NodeLimit,
    /// Wall-clock budget exhausted.
    TimeLimit,
    /// An LP failed numerically, or a near-integral point could not be
    /// certified against the raw model.
    NumericalFailure(String),
}

/// Search effort counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchStats {
    /// Branch-and-bound nodes whose relaxation was solved.
    pub nodes: u64,
    /// LP solves, including integer-fixing re-solves.
    pub lp_calls: u64,
    /// Wall time in seconds (not deterministic; everything else is).
    pub wall_time_s: f64,
    /// Deepest node level reached (root = 0).
    pub deepest_level: usize,
}

/// Raw search result before verdict mapping.
#[derive(Debug, Clone)]
pub enum SearchOutcome {
    /// Every branch pruned by LP infeasibility.
    Infeasible,
    /// A satisfying assignment (checked against the raw model).
    Feasible(Vec<f64>),
    /// Budget or numerics got in the way.
    ResourceLimit(LimitReason),
}

/// Solver tolerances for the search.
#[derive(Debug, Clone)]
pub struct SearchTols {
    /// LP core configuration.
    pub lp: LpConfig,
    /// Integrality tolerance on relaxation points.
    pub int_tol: f64,
    /// Absolute tolerance when re-checking assignments against raw rows.
    pub assignment_tol: f64,
}

impl Default for SearchTols {
    fn default() -> Self {
        Self {
            lp: LpConfig::default(),
            int_tol: 1e-6,
            assignment_tol: 1e-6,
        }
    }
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    depth: usize,
}

/// Depth-first feasibility search.
///
/// Each node solves the LP relaxation under its bound patch. Infeasible
/// relaxations prune; near-integral points are rounded and re-verified
/// against the raw model (with an integer-fixing LP re-solve as fallback);
/// otherwise the search branches on the most-fractional integer variable
/// (ties toward the lowest id) with floor/ceiling children, exploring the
/// child nearer the fractional value first.
pub fn milp_feasible(
    model: &MilpModel,
    limits: SolverLimits,
    tols: &SearchTols,
) -> (SearchOutcome, SearchStats) {
    let start = Instant::now();
    let relaxation = model.relaxation();
    let int_ids = model.integer_ids();
    let mut stats = SearchStats {
        nodes: 0,
        lp_calls: 0,
        wall_time_s: 0.0,
        deepest_level: 0,
    };
    let mut stack = vec![Node {
        lower: relaxation.lower.clone(),
        upper: relaxation.upper.clone(),
        depth: 0,
    }];
    let finish = |outcome: SearchOutcome, mut stats: SearchStats| {
        stats.wall_time_s = start.elapsed().as_secs_f64();
        (outcome, stats)
    };

    while let Some(node) = stack.pop() {
        if stats.nodes >= limits.max_nodes {
            return finish(SearchOutcome::ResourceLimit(LimitReason::NodeLimit), stats);
        }
        if start.elapsed().as_secs_f64() > limits.time_budget_s {
            return finish(SearchOutcome::ResourceLimit(LimitReason::TimeLimit), stats);
        }
        stats.nodes += 1;
        stats.deepest_level = stats.deepest_level.max(node.depth);
        stats.lp_calls += 1;
        let out = lp::solve_with_bounds(&relaxation, &node.lower, &node.upper, &tols.lp);
        let point = match out.status {
            LpStatus::Infeasible => continue,
            LpStatus::Optimal => out.point.expect("optimal lp carries a point"),
            other => {
                return finish(
                    SearchOutcome::ResourceLimit(LimitReason::NumericalFailure(format!(
                        "node lp returned {other:?}"
                    ))),
                    stats,
                );
            }
        };

        // Most-fractional integer variable; ties resolved by lowest id.
        let mut branch: Option<(usize, f64, f64)> = None; // (id, value, distance)
        for &id in &int_ids {
            let v = point[id];
            let dist = (v - v.round()).abs();
            if dist > tols.int_tol {
                match branch {
                    Some((_, _, best)) if best >= dist => {}
                    _ => branch = Some((id, v, dist)),
                }
            }
        }

        if branch.is_none() {
            match accept_integral(model, &relaxation, &node, &point, &int_ids, tols, &mut stats) {
                Ok(assignment) => return finish(SearchOutcome::Feasible(assignment), stats),
                Err(detail) => {
                    // The point looked integral but its rounding is not
                    // certifiable (tolerance collision between the strict
                    // slack and the integrality window). Branching on the
                    // most suspicious unfixed variable keeps the partition
                    // exact, so soundness is unaffected.
                    let mut suspect: Option<(usize, f64, f64)> = None;
                    for &id in &int_ids {
                        if node.lower[id] >= node.upper[id] {
                            continue;
                        }
                        let v = point[id];
                        let dist = (v - v.round()).abs();
                        match suspect {
                            Some((_, _, best)) if best >= dist => {}
                            _ => suspect = Some((id, v, dist)),
                        }
                    }
                    match suspect {
                        Some(s) => branch = Some(s),
                        None => {
                            return finish(
                                SearchOutcome::ResourceLimit(LimitReason::NumericalFailure(
                                    detail,
                                )),
                                stats,
                            );
                        }
                    }
                }
            }
        }

        let (id, value, _) = branch.expect("branch chosen above");
        // Split at q clamped into [lower, upper-1]: both children are
        // strictly narrower than the parent, so the tree is finite even when
        // the relaxation point sits on an integer.
        let q = value.floor().clamp(node.lower[id], node.upper[id] - 1.0);
        let mut down_child = Node {
            lower: node.lower.clone(),
            upper: node.upper.clone(),
            depth: node.depth + 1,
        };
        down_child.upper[id] = q;
        let mut up_child = Node {
            lower: node.lower,
            upper: node.upper,
            depth: node.depth + 1,
        };
        up_child.lower[id] = q + 1.0;
        // Push the farther child first so the nearer one pops first.
        if value.round() <= q {
            stack.push(up_child);
            stack.push(down_child);
        } else {
            stack.push(down_child);
            stack.push(up_child);
        }
    }
    finish(SearchOutcome::Infeasible, stats)
}

/// Round the near-integral point and certify it against the raw model. If
/// rounding drift breaks a row, re-solve the LP with the integers fixed and
/// certify that instead.
fn accept_integral(
    model: &MilpModel,
    relaxation: &lp::LpProblem,
    node: &Node,
    point: &[f64],
    int_ids: &[usize],
    tols: &SearchTols,
    stats: &mut SearchStats,
) -> std::result::Result<Vec<f64>, String> {
    let mut rounded = point.to_vec();
    for &id in int_ids {
        rounded[id] = rounded[id]
            .round()
            .clamp(node.lower[id], node.upper[id]);
    }
    // Accept directly only at LP-residual precision. Gating at the looser
    // assignment tolerance would let a point that rides an indicator's
    // strict-inequality slack (violation just under epsilon) sneak through
    // as "feasible"; such points must go to the fixing LP, which decides
    // them exactly.
    if model.check_assignment(&rounded, tols.lp.feas_tol).is_ok() {
        return Ok(rounded);
    }
    let mut lower = node.lower.clone();
    let mut upper = node.upper.clone();
    for &id in int_ids {
        lower[id] = rounded[id];
        upper[id] = rounded[id];
    }
    stats.lp_calls += 1;
    let out = lp::solve_with_bounds(relaxation, &lower, &upper, &tols.lp);
    match out.status {
        LpStatus::Optimal => {
            let mut fixed = out.point.expect("optimal lp carries a point");
            for &id in int_ids {
                fixed[id] = rounded[id];
            }
            model
                .check_assignment(&fixed, tols.assignment_tol)
                .map_err(|e| format!("integer-fixed point failed re-verification: {e}"))?;
            Ok(fixed)
        }
        other => Err(format!(
            "integral relaxation point could not be certified (fixing lp: {other:?})"
        )),
    }
}

/// Final verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    /// The falsification program is infeasible: certified robust.
    Robust,
    /// A validated counterexample heatmap exists in the reachable set. The
    /// over-approximation may still be to blame, so this is not a
    /// non-robustness proof.
    Unknown,
    /// Budgets or numerics prevented an answer.
    Inconclusive,
}

/// Verdict plus evidence and effort counters.
#[derive(Debug, Clone)]
pub struct Verdict {
    /// Robust / Unknown / Inconclusive.
    pub status: VerdictStatus,
    /// Present exactly when `status == Unknown`; always validated.
    pub counterexample: Option<Counterexample>,
    /// Search counters; wall time covers the whole pipeline.
    pub stats: SearchStats,
    /// Present exactly when `status == Inconclusive`.
    pub reason: Option<LimitReason>,
}

/// Pipeline switches.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Apply dominance pruning to the index sets (on by default).
    pub pruning: bool,
    /// Use per-facet tightened Big-M constants; when off, every facet uses
    /// the instance's raw fallback constant.
    pub tighten_big_m: bool,
    /// Search tolerances.
    pub tols: SearchTols,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            pruning: true,
            tighten_big_m: true,
            tols: SearchTols::default(),
        }
    }
}

/// Build and assemble the falsification program for an instance, honoring
/// the pruning and Big-M options. Shared by `verify` and the exporters.
pub fn assemble_model(inst: &ProblemInstance, opts: &VerifyOptions) -> Result<MilpModel> {
    let dev_box = deviation_box(inst);
    let big_m = if opts.tighten_big_m {
        big_m_vector(inst, &dev_box)
    } else {
        vec![inst.big_m_fallback(); inst.deviation_polytope().num_facets()]
    };
    let in_bound = in_bound_sets(inst, &opts.tols.lp)?;
    let bounds = inst.reach_set().bounds();
    let sets = if opts.pruning {
        prune_index_sets(inst, &in_bound, &bounds)
    } else {
        unpruned_index_sets(inst, &in_bound)
    };
    problem::check_in_bound_nonempty(&sets)?;
    encode::build_milp(inst, &sets, &bounds, &big_m)
}

/// Full certification pipeline: image-bound box, Big-M constants, in-bound
/// projection, zonotope bounds, pruning, encoding, branch-and-bound, and
/// counterexample decoding.
pub fn verify(inst: &ProblemInstance, opts: &VerifyOptions) -> Result<Verdict> {
    let start = Instant::now();
    let model = assemble_model(inst, opts)?;
    log::debug!(
        "model assembled: {} vars ({} binary), {} rows",
        model.num_vars(),
        model.count_kind(crate::encode::VarKind::Binary),
        model.constraints.len()
    );
    let (outcome, mut stats) = milp_feasible(&model, inst.limits(), &opts.tols);
    stats.wall_time_s = start.elapsed().as_secs_f64();
    let verdict = match outcome {
        SearchOutcome::Infeasible => Verdict {
            status: VerdictStatus::Robust,
            counterexample: None,
            stats,
            reason: None,
        },
        SearchOutcome::ResourceLimit(reason) => Verdict {
            status: VerdictStatus::Inconclusive,
            counterexample: None,
            stats,
            reason: Some(reason),
        },
        SearchOutcome::Feasible(assignment) => {
            let cex =
                encode::decode_counterexample(inst, &model, &assignment, opts.tols.assignment_tol)?;
            if cex.validated {
                Verdict {
                    status: VerdictStatus::Unknown,
                    counterexample: Some(cex),
                    stats,
                    reason: None,
                }
            } else {
                // A feasible point whose reconstruction does not reproduce an
                // out-of-bound argmax is numerical debris, not evidence.
                let detail = format!(
                    "decoded counterexample failed validation: deviation {:?}, per-channel maxima {:?}",
                    cex.deviation,
                    cex.report
                        .per_channel
                        .iter()
                        .map(|c| (c.channel, c.max_value))
                        .collect::<Vec<_>>()
                );
                Verdict {
                    status: VerdictStatus::Inconclusive,
                    counterexample: None,
                    stats,
                    reason: Some(LimitReason::NumericalFailure(detail)),
                }
            }
        }
    };
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{ConstraintTag, MilpConstraint, VarKind, VarRole, Variable};
    use crate::fixtures;
    use crate::lp::{LinRow, Relation};

    /// Hand-rolled model: binary x with 0.3 ≤ x ≤ 0.7 has a feasible
    /// relaxation but no integral point.
    fn integrality_gap_model() -> MilpModel {
        let variables = vec![Variable {
            id: 0,
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
            role: VarRole::Facet(1),
        }];
        let constraints = vec![
            MilpConstraint {
                row: LinRow {
                    coeffs: vec![(0, 1.0)],
                    rel: Relation::Ge,
                    rhs: 0.3,
                },
                tag: ConstraintTag::FacetCover,
            },
            MilpConstraint {
                row: LinRow {
                    coeffs: vec![(0, 1.0)],
                    rel: Relation::Le,
                    rhs: 0.7,
                },
                tag: ConstraintTag::FacetCover,
            },
        ];
        MilpModel::for_tests(variables, constraints, (1, 1, 1, 0, 1))
    }

    #[test]
    fn integrality_gap_is_infeasible() {
        let model = integrality_gap_model();
        let (outcome, stats) = milp_feasible(&model, SolverLimits::default(), &SearchTols::default());
        assert!(matches!(outcome, SearchOutcome::Infeasible));
        assert!(stats.nodes >= 2, "must branch at least once");
    }

    #[test]
    fn first_scenario_verifies_robust() {
        let verdict = verify(&fixtures::robust_3x3(), &VerifyOptions::default()).unwrap();
        assert_eq!(verdict.status, VerdictStatus::Robust);
        assert!(verdict.counterexample.is_none());
        assert!(verdict.reason.is_none());
    }

    #[test]
    fn second_scenario_finds_validated_counterexample() {
        let verdict = verify(&fixtures::fragile_3x3(), &VerifyOptions::default()).unwrap();
        assert_eq!(verdict.status, VerdictStatus::Unknown);
        let cex = verdict.counterexample.expect("unknown verdict carries evidence");
        assert!(cex.validated);
        // Any witness here must overshoot the budget upward (facet 1); the
        // search is free to pick any satisfying assignment.
        assert_eq!(cex.report.violated_facets, vec![1]);
        let sum: i64 = cex.deviation.iter().sum();
        assert!(sum >= 2, "deviation {:?} does not overshoot", cex.deviation);
    }

    #[test]
    fn scenarios_agree_without_pruning() {
        let opts = VerifyOptions {
            pruning: false,
            ..VerifyOptions::default()
        };
        assert_eq!(
            verify(&fixtures::robust_3x3(), &opts).unwrap().status,
            VerdictStatus::Robust
        );
        assert_eq!(
            verify(&fixtures::fragile_3x3(), &opts).unwrap().status,
            VerdictStatus::Unknown
        );
    }

    #[test]
    fn raw_big_m_gives_the_same_verdicts() {
        let opts = VerifyOptions {
            tighten_big_m: false,
            ..VerifyOptions::default()
        };
        assert_eq!(
            verify(&fixtures::robust_3x3(), &opts).unwrap().status,
            VerdictStatus::Robust
        );
        assert_eq!(
            verify(&fixtures::fragile_3x3(), &opts).unwrap().status,
            VerdictStatus::Unknown
        );
    }

    #[test]
    fn node_budget_yields_inconclusive_never_robust() {
        let inst = fixtures::fragile_3x3();
        let model = assemble_model(&inst, &VerifyOptions::default()).unwrap();
        let limits = SolverLimits {
            max_nodes: 0,
            time_budget_s: 60.0,
        };
        let (outcome, _) = milp_feasible(&model, limits, &SearchTols::default());
        assert!(matches!(
            outcome,
            SearchOutcome::ResourceLimit(LimitReason::NodeLimit)
        ));
    }

    #[test]
    fn search_stats_are_deterministic() {
        let inst = fixtures::fragile_3x3();
        let model = assemble_model(&inst, &VerifyOptions::default()).unwrap();
        let runs: Vec<(SearchOutcome, SearchStats)> = (0..3)
            .map(|_| milp_feasible(&model, inst.limits(), &SearchTols::default()))
            .collect();
        for pair in runs.windows(2) {
            assert_eq!(pair[0].1.nodes, pair[1].1.nodes);
            assert_eq!(pair[0].1.lp_calls, pair[1].1.lp_calls);
            assert_eq!(pair[0].1.deepest_level, pair[1].1.deepest_level);
            match (&pair[0].0, &pair[1].0) {
                (SearchOutcome::Feasible(a), SearchOutcome::Feasible(b)) => assert_eq!(a, b),
                _ => panic!("fragile fixture must be feasible"),
            }
        }
    }

    #[test]
    fn singleton_set_at_ground_truth_is_robust() {
        // No generators, unique strict maxima at the ground-truth pixels,
        // polytope containing only the zero deviation.
        let inst = fixtures::instance_with_polytope(
            3,
            3,
            &[(2, 2)],
            vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]],
            vec![0.0, 0.0, 0.0, 0.0],
        );
        let verdict = verify(&inst, &VerifyOptions::default()).unwrap();
        assert_eq!(verdict.status, VerdictStatus::Robust);
    }

    #[test]
    fn empty_in_bound_set_is_an_error() {
        let inst = fixtures::instance_with_polytope(
            3,
            3,
            &[(2, 2)],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![0.3, -0.2],
        );
        assert!(matches!(
            verify(&inst, &VerifyOptions::default()),
            Err(crate::Error::EmptyInBoundSet { keypoint: 1 })
        ));
    }
}
