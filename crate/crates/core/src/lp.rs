//! Bounded-variable linear programming core.
//!
//! A dense two-phase simplex over variables with (possibly infinite) lower
//! and upper bounds. Phase 1 minimizes the total bound infeasibility of the
//! basic variables with the composite-cost rule; phase 2 optimizes the
//! caller's objective. Feasibility-only problems (no objective) stop after
//! phase 1.
//!
//! Numerical caveat: this solver works in floating point, not exact
//! rationals. An "infeasible" answer means phase 1 stalled above `feas_tol`;
//! a numerically marginal system could in principle be misclassified. The
//! optional [`LpConfig::certify`] mode re-checks infeasible answers with a
//! Farkas-style dual residual computed from the raw data, and every feasible
//! point is re-verified against the raw rows before it is returned.
//! Iteration-limit and singular-basis conditions are reported as
//! [`LpStatus::NumericalFailure`], never silently as infeasibility.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `a·x ≤ rhs`
    Le,
    /// `a·x = rhs`
    Eq,
    /// `a·x ≥ rhs`
    Ge,
}

impl Relation {
    /// Symbol for exports and diagnostics.
    pub fn symbol(&self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// A sparse linear constraint `Σ coeffs · x  rel  rhs`.
///
/// Duplicate variable entries are permitted and sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRow {
    /// `(variable id, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    /// Relation against `rhs`.
    pub rel: Relation,
    /// Right-hand side.
    pub rhs: f64,
}

impl LinRow {
    /// `Σ coeffs · x` for a dense point.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Signed violation of the row at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.dot(x);
        match self.rel {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Objective sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// Minimize the objective.
    Minimize,
    /// Maximize the objective.
    Maximize,
}

/// Sparse linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// Optimization direction.
    pub sense: Sense,
    /// `(variable id, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
}

/// A bounded-variable linear program.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Number of structural variables.
    pub num_vars: usize,
    /// Per-variable lower bounds; `f64::NEG_INFINITY` for unbounded.
    pub lower: Vec<f64>,
    /// Per-variable upper bounds; `f64::INFINITY` for unbounded.
    pub upper: Vec<f64>,
    /// Constraint rows.
    pub rows: Vec<LinRow>,
    /// Optional objective; `None` means pure feasibility.
    pub objective: Option<Objective>,
}

impl LpProblem {
    /// An unconstrained feasibility problem skeleton with free variables.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            rows: Vec::new(),
            objective: None,
        }
    }
}

/// Solve status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    /// Feasible; optimal when an objective was given.
    Optimal,
    /// Phase-1 optimum exceeded `feas_tol`.
    Infeasible,
    /// The objective improves without bound.
    Unbounded,
    /// Iteration limit, singular basis, or a point that failed re-verification.
    NumericalFailure,
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct LpOutcome {
    /// Final status.
    pub status: LpStatus,
    /// Structural variable values; present iff `status == Optimal`.
    pub point: Option<Vec<f64>>,
    /// Objective value at `point`, when an objective was given.
    pub objective: Option<f64>,
    /// Simplex iterations used (pivots plus bound flips, both phases).
    pub iterations: usize,
    /// Total bound infeasibility at the end of phase 1.
    pub phase1_infeasibility: f64,
}

/// Solver tolerances and limits.
#[derive(Debug, Clone)]
pub struct LpConfig {
    /// Feasibility tolerance: phase 1 accepts when total infeasibility drops
    /// to this, and returned points must satisfy every row this tightly.
    pub feas_tol: f64,
    /// Reduced-cost / pivot-element tolerance.
    pub pivot_tol: f64,
    /// Iteration cap; `None` means `50 * (rows + columns)`.
    pub iter_limit: Option<usize>,
    /// Re-check infeasible answers with a Farkas-style dual residual; on
    /// certificate failure the status degrades to `NumericalFailure`.
    pub certify: bool,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            pivot_tol: 1e-9,
            iter_limit: None,
            certify: false,
        }
    }
}

/// Tolerance under which a bound violation is treated as numerical dust for
/// phase-1 cost classification (not for the feasibility verdict itself).
fn classification_tol(cfg: &LpConfig) -> f64 {
    cfg.feas_tol * 1e-3
}

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 64;
/// Pivots between basis refactorizations.
const REFACTOR_EVERY: usize = 64;
/// Step below which a pivot counts as degenerate.
const DEGENERATE_STEP: f64 = 1e-10;
/// Ratio-test tie window.
const RATIO_TIE: f64 = 1e-12;

/// Solve with the problem's own bounds.
pub fn solve(p: &LpProblem, cfg: &LpConfig) -> LpOutcome {
    solve_with_bounds(p, &p.lower, &p.upper, cfg)
}

/// Solve with overridden structural bounds (used by branch-and-bound nodes).
pub fn solve_with_bounds(p: &LpProblem, lower: &[f64], upper: &[f64], cfg: &LpConfig) -> LpOutcome {
    debug_assert_eq!(lower.len(), p.num_vars);
    debug_assert_eq!(upper.len(), p.num_vars);
    // Crossed bounds make the problem trivially empty.
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return LpOutcome {
            status: LpStatus::Infeasible,
            point: None,
            objective: None,
            iterations: 0,
            phase1_infeasibility: f64::INFINITY,
        };
    }
    let mut s = match Simplex::build(p, lower, upper, cfg) {
        Ok(s) => s,
        Err(e) => {
            log::debug!("lp setup failed: {e}");
            return LpOutcome {
                status: LpStatus::NumericalFailure,
                point: None,
                objective: None,
                iterations: 0,
                phase1_infeasibility: f64::INFINITY,
            };
        }
    };
    s.run(p, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Lower,
    Upper,
}

enum Step {
    Moved,
    NoBlock,
    Failure(String),
}

struct Simplex {
    /// Rows and total columns (structural + one slack per row).
    m: usize,
    n_total: usize,
    n_struct: usize,
    /// Column-wise constraint matrix, `cols[j] = [(row, coeff), ..]`.
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    /// Dense `B^{-1}`, row-major `m × m`.
    binv: Vec<f64>,
    iterations: usize,
    pivots_since_refactor: usize,
    degenerate_streak: usize,
    bland: bool,
}

impl Simplex {
    fn build(p: &LpProblem, lower: &[f64], upper: &[f64], _cfg: &LpConfig) -> Result<Self> {
        let n = p.num_vars;
        let m = p.rows.len();
        let n_total = n + m;
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_total];
        let mut lo = Vec::with_capacity(n_total);
        let mut up = Vec::with_capacity(n_total);
        for j in 0..n {
            // NaN bounds must land in the error branch, hence the negation.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(lower[j] <= upper[j]) {
                return Err(Error::Invalid {
                    kind: "lp",
                    reason: format!("variable {j} bounds invalid"),
                });
            }
            lo.push(lower[j]);
            up.push(upper[j]);
        }
        let mut rhs = Vec::with_capacity(m);
        for (r, row) in p.rows.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                if j >= n {
                    return Err(Error::Invalid {
                        kind: "lp",
                        reason: format!("row {r} references variable {j} of {n}"),
                    });
                }
                if !c.is_finite() {
                    return Err(Error::NonFinite(format!("row {r} coefficient")));
                }
                cols[j].push((r, c));
            }
            if !row.rhs.is_finite() {
                return Err(Error::NonFinite(format!("row {r} rhs")));
            }
            // Slack column: row + slack = rhs, with the slack sign encoding
            // the relation.
            cols[n + r].push((r, 1.0));
            let (slo, sup) = match row.rel {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(slo);
            up.push(sup);
            rhs.push(row.rhs);
        }

        // Start from the slack basis; nonbasic structurals sit at a finite
        // bound (lower preferred) or at zero when free.
        let mut state = Vec::with_capacity(n_total);
        let mut x = vec![0.0; n_total];
        for j in 0..n {
            if lo[j].is_finite() {
                state.push(VarState::AtLower);
                x[j] = lo[j];
            } else if up[j].is_finite() {
                state.push(VarState::AtUpper);
                x[j] = up[j];
            } else {
                state.push(VarState::Free);
                x[j] = 0.0;
            }
        }
        let mut basis = Vec::with_capacity(m);
        for r in 0..m {
            state.push(VarState::Basic(r));
            basis.push(n + r);
        }
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        let mut s = Self {
            m,
            n_total,
            n_struct: n,
            cols,
            lower: lo,
            upper: up,
            rhs,
            basis,
            state,
            x,
            binv,
            iterations: 0,
            pivots_since_refactor: 0,
            degenerate_streak: 0,
            bland: false,
        };
        s.recompute_basics();
        Ok(s)
    }

    /// `x_B = B^{-1} (b - N x_N)`.
    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut resid = self.rhs.clone();
        for j in 0..self.n_total {
            if let VarState::Basic(_) = self.state[j] {
                continue;
            }
            let v = self.x[j];
            if v != 0.0 {
                for &(r, c) in &self.cols[j] {
                    resid[r] -= c * v;
                }
            }
        }
        for r in 0..m {
            let mut v = 0.0;
            for t in 0..m {
                v += self.binv[r * m + t] * resid[t];
            }
            self.x[self.basis[r]] = v;
        }
    }

    /// Rebuild `B^{-1}` from scratch by Gauss-Jordan with partial pivoting.
    fn refactorize(&mut self, cfg: &LpConfig) -> std::result::Result<(), String> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        // Augmented [B | I].
        let mut a = vec![0.0; m * 2 * m];
        for (r, &bj) in self.basis.iter().enumerate() {
            for &(row, c) in &self.cols[bj] {
                a[row * 2 * m + r] = c;
            }
        }
        for r in 0..m {
            a[r * 2 * m + m + r] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = a[col * 2 * m + col].abs();
            for r in col + 1..m {
                let v = a[r * 2 * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= cfg.pivot_tol {
                return Err(format!("singular basis at column {col}"));
            }
            if piv != col {
                for t in 0..2 * m {
                    a.swap(col * 2 * m + t, piv * 2 * m + t);
                }
            }
            let d = a[col * 2 * m + col];
            for t in 0..2 * m {
                a[col * 2 * m + t] /= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * 2 * m + col];
                if f != 0.0 {
                    for t in 0..2 * m {
                        a[r * 2 * m + t] -= f * a[col * 2 * m + t];
                    }
                }
            }
        }
        for r in 0..m {
            for t in 0..m {
                self.binv[r * m + t] = a[r * 2 * m + m + t];
            }
        }
        self.pivots_since_refactor = 0;
        self.recompute_basics();
        Ok(())
    }

    /// `w = B^{-1} a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        for &(r, c) in &self.cols[j] {
            if c != 0.0 {
                for i in 0..m {
                    w[i] += c * self.binv[i * m + r];
                }
            }
        }
        w
    }

    /// `y^T = c_B^T B^{-1}` for a per-row basic cost vector.
    fn btran(&self, basic_costs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &c) in basic_costs.iter().enumerate() {
            if c != 0.0 {
                for t in 0..m {
                    y[t] += c * self.binv[i * m + t];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, c_j: f64, y: &[f64]) -> f64 {
        let mut d = c_j;
        for &(r, c) in &self.cols[j] {
            d -= y[r] * c;
        }
        d
    }

    fn total_infeasibility(&self) -> f64 {
        let mut total = 0.0;
        for &bj in &self.basis {
            let v = self.x[bj];
            total += (self.lower[bj] - v).max(0.0) + (v - self.upper[bj]).max(0.0);
        }
        total
    }

    /// Pick an entering column. `costs[j]` is the full cost vector (zeros in
    /// phase 1). Returns `(column, direction)`.
    fn price(&self, costs: &[f64], y: &[f64], cfg: &LpConfig) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None; // (j, dir, |d|)
        for j in 0..self.n_total {
            let (can_up, can_down) = match self.state[j] {
                VarState::Basic(_) => continue,
                VarState::AtLower => (self.lower[j] < self.upper[j], false),
                VarState::AtUpper => (false, self.lower[j] < self.upper[j]),
                VarState::Free => (true, true),
            };
            if !can_up && !can_down {
                continue;
            }
            let d = self.reduced_cost(j, costs[j], y);
            let dir = if can_up && d < -cfg.pivot_tol {
                1.0
            } else if can_down && d > cfg.pivot_tol {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                return Some((j, dir));
            }
            let mag = d.abs();
            match best {
                Some((_, _, bm)) if bm >= mag => {}
                _ => best = Some((j, dir, mag)),
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// One simplex step for the entering column. `phase1` relaxes the ratio
    /// test so that out-of-bounds basics block at the bound they violate.
    fn step(&mut self, enter: usize, dir: f64, phase1: bool, cfg: &LpConfig) -> Step {
        let cls = classification_tol(cfg);
        let w = self.ftran(enter);
        let mut t_best = f64::INFINITY;
        let mut blocking: Option<(usize, Block, f64)> = None; // (row, bound, |w|)
        for r in 0..self.m {
            if w[r].abs() <= cfg.pivot_tol {
                continue;
            }
            let rate = -dir * w[r];
            let bj = self.basis[r];
            let v = self.x[bj];
            let (lo, up) = (self.lower[bj], self.upper[bj]);
            let candidate: Option<(f64, Block)> = if phase1 && v < lo - cls {
                // Below its lower bound: blocks when pushed up to it.
                (rate > 0.0).then(|| ((lo - v) / rate, Block::Lower))
            } else if phase1 && v > up + cls {
                (rate < 0.0).then(|| ((v - up) / -rate, Block::Upper))
            } else if rate > 0.0 {
                up.is_finite().then(|| ((up - v) / rate, Block::Upper))
            } else {
                lo.is_finite().then(|| ((v - lo) / -rate, Block::Lower))
            };
            let Some((t_r, bound)) = candidate else {
                continue;
            };
            let t_r = t_r.max(0.0);
            // Bland mode uses exact comparisons: the anti-cycling argument
            // needs the true minimum-ratio set, not a tolerance window.
            let replace = if self.bland {
                match blocking {
                    None => true,
                    Some((br, _, _)) => {
                        t_r < t_best || (t_r == t_best && self.basis[r] < self.basis[br])
                    }
                }
            } else if t_r < t_best - RATIO_TIE {
                true
            } else if t_r <= t_best + RATIO_TIE {
                match blocking {
                    None => true,
                    Some((br, _, bw)) => {
                        w[r].abs() > bw || (w[r].abs() == bw && self.basis[r] < self.basis[br])
                    }
                }
            } else {
                false
            };
            if replace {
                t_best = t_best.min(t_r);
                blocking = Some((r, bound, w[r].abs()));
            }
        }

        // The entering variable may hit its own opposite bound first.
        let range = self.upper[enter] - self.lower[enter];
        let flip = matches!(self.state[enter], VarState::AtLower | VarState::AtUpper)
            && range.is_finite()
            && range < t_best - RATIO_TIE;
        if flip {
            for r in 0..self.m {
                self.x[self.basis[r]] -= dir * range * w[r];
            }
            self.x[enter] = if dir > 0.0 {
                self.upper[enter]
            } else {
                self.lower[enter]
            };
            self.state[enter] = if dir > 0.0 {
                VarState::AtUpper
            } else {
                VarState::AtLower
            };
            self.iterations += 1;
            self.note_step(range);
            return Step::Moved;
        }

        let Some((r_leave, bound, _)) = blocking else {
            return Step::NoBlock;
        };
        let t = t_best;
        for r in 0..self.m {
            self.x[self.basis[r]] -= dir * t * w[r];
        }
        self.x[enter] += dir * t;
        let leave = self.basis[r_leave];
        // Snap the leaving variable exactly onto the bound it blocked at.
        self.x[leave] = match bound {
            Block::Lower => self.lower[leave],
            Block::Upper => self.upper[leave],
        };
        self.state[leave] = match bound {
            Block::Lower => VarState::AtLower,
            Block::Upper => VarState::AtUpper,
        };
        self.state[enter] = VarState::Basic(r_leave);
        self.basis[r_leave] = enter;

        // Product-form update of B^{-1}.
        let m = self.m;
        let piv = w[r_leave];
        if piv.abs() <= cfg.pivot_tol {
            return Step::Failure("pivot element vanished".into());
        }
        for t_col in 0..m {
            self.binv[r_leave * m + t_col] /= piv;
        }
        for r in 0..m {
            if r == r_leave || w[r] == 0.0 {
                continue;
            }
            let f = w[r];
            for t_col in 0..m {
                self.binv[r * m + t_col] -= f * self.binv[r_leave * m + t_col];
            }
        }
        self.iterations += 1;
        self.pivots_since_refactor += 1;
        self.note_step(t);
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            if let Err(e) = self.refactorize(cfg) {
                return Step::Failure(e);
            }
        }
        Step::Moved
    }

    fn note_step(&mut self, t: f64) {
        if t <= DEGENERATE_STEP {
            self.degenerate_streak += 1;
            if self.degenerate_streak >= DEGENERATE_SWITCH {
                // Sticky for the rest of the phase: leaving Bland's rule on a
                // cosmetic non-degenerate step reopens the cycling door.
                self.bland = true;
            }
        } else {
            self.degenerate_streak = 0;
        }
    }

    /// Phase 1: drive total infeasibility to `feas_tol`.
    fn phase1(&mut self, cfg: &LpConfig, iter_limit: usize) -> std::result::Result<f64, String> {
        self.bland = false;
        self.degenerate_streak = 0;
        let mut retried = false;
        loop {
            let total = self.total_infeasibility();
            if total <= cfg.feas_tol {
                return Ok(total);
            }
            if self.iterations >= iter_limit {
                return Err("iteration limit in phase 1".into());
            }
            // Composite costs: -1 below the lower bound, +1 above the upper.
            // Dust-level violations are classified feasible so their costs
            // do not flap between iterations.
            let cls = classification_tol(cfg);
            let mut basic_costs = vec![0.0; self.m];
            let mut costs = vec![0.0; self.n_total];
            for (r, &bj) in self.basis.iter().enumerate() {
                let v = self.x[bj];
                let c = if v < self.lower[bj] - cls {
                    -1.0
                } else if v > self.upper[bj] + cls {
                    1.0
                } else {
                    0.0
                };
                basic_costs[r] = c;
                costs[bj] = c;
            }
            let y = self.btran(&basic_costs);
            let Some((enter, dir)) = self.price(&costs, &y, cfg) else {
                // Phase-1 optimum above tolerance. Refactorize once to rule
                // out accumulated update error before concluding.
                if !retried {
                    retried = true;
                    self.refactorize(cfg)?;
                    continue;
                }
                return Ok(total);
            };
            match self.step(enter, dir, true, cfg) {
                Step::Moved => {}
                Step::NoBlock => {
                    // Infeasibility cannot decrease without bound; a missing
                    // breakpoint is a numerical artifact.
                    return Err("unblocked phase-1 ray".into());
                }
                Step::Failure(e) => return Err(e),
            }
        }
    }

    /// Phase 2: minimize `costs` over the feasible region.
    fn phase2(
        &mut self,
        costs: &[f64],
        cfg: &LpConfig,
        iter_limit: usize,
    ) -> std::result::Result<bool, String> {
        self.bland = false;
        self.degenerate_streak = 0;
        loop {
            if self.iterations >= iter_limit {
                return Err("iteration limit in phase 2".into());
            }
            let basic_costs: Vec<f64> = self.basis.iter().map(|&bj| costs[bj]).collect();
            let y = self.btran(&basic_costs);
            let Some((enter, dir)) = self.price(costs, &y, cfg) else {
                return Ok(true);
            };
            match self.step(enter, dir, false, cfg) {
                Step::Moved => {}
                Step::NoBlock => return Ok(false), // unbounded ray
                Step::Failure(e) => return Err(e),
            }
        }
    }

    fn run(&mut self, p: &LpProblem, cfg: &LpConfig) -> LpOutcome {
        let iter_limit = cfg
            .iter_limit
            .unwrap_or(50 * (self.m + self.n_total).max(1));
        let fail = |iterations: usize, phase1_infeasibility: f64| LpOutcome {
            status: LpStatus::NumericalFailure,
            point: None,
            objective: None,
            iterations,
            phase1_infeasibility,
        };

        let phi = match self.phase1(cfg, iter_limit) {
            Ok(phi) => phi,
            Err(e) => {
                log::debug!("lp phase 1 failed: {e}");
                return fail(self.iterations, f64::INFINITY);
            }
        };
        if phi > cfg.feas_tol {
            if cfg.certify && !self.certify_infeasible(phi, cfg) {
                log::debug!("lp infeasibility certificate failed (phi = {phi:.3e})");
                return fail(self.iterations, phi);
            }
            return LpOutcome {
                status: LpStatus::Infeasible,
                point: None,
                objective: None,
                iterations: self.iterations,
                phase1_infeasibility: phi,
            };
        }

        if let Some(obj) = &p.objective {
            let mut costs = vec![0.0; self.n_total];
            for &(j, c) in &obj.coeffs {
                costs[j] += match obj.sense {
                    Sense::Minimize => c,
                    Sense::Maximize => -c,
                };
            }
            match self.phase2(&costs, cfg, iter_limit) {
                Ok(true) => {}
                Ok(false) => {
                    return LpOutcome {
                        status: LpStatus::Unbounded,
                        point: None,
                        objective: None,
                        iterations: self.iterations,
                        phase1_infeasibility: phi,
                    };
                }
                Err(e) => {
                    log::debug!("lp phase 2 failed: {e}");
                    return fail(self.iterations, phi);
                }
            }
        }

        // Independent residual check against the raw problem data. Basic
        // values are recomputed first to clear update drift; if the cheap
        // recomputation is not enough, refactorize once and retry.
        self.recompute_basics();
        if !self.residuals_ok(p, cfg)
            && (self.refactorize(cfg).is_err() || !self.residuals_ok(p, cfg))
        {
            log::debug!("lp residual check failed after refactorization");
            return fail(self.iterations, phi);
        }
        let point: Vec<f64> = self.x[..self.n_struct].to_vec();
        let objective = p
            .objective
            .as_ref()
            .map(|obj| obj.coeffs.iter().map(|&(j, c)| c * self.x[j]).sum());

        LpOutcome {
            status: LpStatus::Optimal,
            point: Some(point),
            objective,
            iterations: self.iterations,
            phase1_infeasibility: phi,
        }
    }

    fn residuals_ok(&self, p: &LpProblem, cfg: &LpConfig) -> bool {
        let point = &self.x[..self.n_struct];
        for row in &p.rows {
            if row.violation(point) > cfg.feas_tol {
                return false;
            }
        }
        for (j, &v) in point.iter().enumerate() {
            if v < self.lower[j] - cfg.feas_tol || v > self.upper[j] + cfg.feas_tol {
                return false;
            }
        }
        true
    }

    /// Farkas-style residual for an infeasible phase-1 optimum: any feasible
    /// point would have total infeasibility at least
    /// `phi - Σ reduced-cost slack · bound width`, so a positive residual
    /// certifies emptiness. Recomputed from the raw column data.
    fn certify_infeasible(&self, phi: f64, cfg: &LpConfig) -> bool {
        let mut basic_costs = vec![0.0; self.m];
        let mut costs = vec![0.0; self.n_total];
        for (r, &bj) in self.basis.iter().enumerate() {
            let v = self.x[bj];
            let c = if v < self.lower[bj] {
                -1.0
            } else if v > self.upper[bj] {
                1.0
            } else {
                0.0
            };
            basic_costs[r] = c;
            costs[bj] = c;
        }
        let y = self.btran(&basic_costs);
        let mut slack_sum = 0.0;
        for j in 0..self.n_total {
            let d = self.reduced_cost(j, costs[j], &y);
            let width = self.upper[j] - self.lower[j];
            let viol = match self.state[j] {
                VarState::AtLower => (-d).max(0.0),
                VarState::AtUpper => d.max(0.0),
                // Basic and free columns must price out to ~zero; widths may
                // be infinite there, so any real residual voids the check.
                VarState::Free | VarState::Basic(_) => {
                    if d.abs() > 1e-6 {
                        return false;
                    }
                    0.0
                }
            };
            if viol > cfg.pivot_tol.max(1e-9) {
                if !width.is_finite() {
                    return false;
                }
                slack_sum += viol * width;
            }
        }
        phi - slack_sum > cfg.feas_tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{lp_vertex_oracle, random_lp};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn row(coeffs: &[(usize, f64)], rel: Relation, rhs: f64) -> LinRow {
        LinRow {
            coeffs: coeffs.to_vec(),
            rel,
            rhs,
        }
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = LpProblem::new(1);
        p.lower[0] = f64::NEG_INFINITY;
        p.rows.push(row(&[(0, 1.0)], Relation::Ge, 1.0));
        p.rows.push(row(&[(0, 1.0)], Relation::Le, 0.0));
        let out = solve(&p, &LpConfig::default());
        assert_eq!(out.status, LpStatus::Infeasible);

        let certified = solve(
            &p,
            &LpConfig {
                certify: true,
                ..LpConfig::default()
            },
        );
        assert_eq!(certified.status, LpStatus::Infeasible);
    }

    #[test]
    fn simple_maximum_on_unit_box() {
        let mut p = LpProblem::new(2);
        p.lower = vec![0.0, 0.0];
        p.upper = vec![1.0, 1.0];
        p.rows.push(row(&[(0, 1.0), (1, 1.0)], Relation::Le, 1.0));
        p.objective = Some(Objective {
            sense: Sense::Maximize,
            coeffs: vec![(0, 1.0), (1, 1.0)],
        });
        let out = solve(&p, &LpConfig::default());
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_ray_is_reported() {
        let mut p = LpProblem::new(1);
        p.lower[0] = 0.0;
        p.objective = Some(Objective {
            sense: Sense::Maximize,
            coeffs: vec![(0, 1.0)],
        });
        let out = solve(&p, &LpConfig::default());
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = LpProblem::new(1);
        p.lower[0] = 2.0;
        p.upper[0] = 1.0;
        assert_eq!(solve(&p, &LpConfig::default()).status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_rows_and_fixed_variables() {
        // x0 fixed at 2, x0 + x1 = 5 -> x1 = 3, minimize x1.
        let mut p = LpProblem::new(2);
        p.lower = vec![2.0, -10.0];
        p.upper = vec![2.0, 10.0];
        p.rows.push(row(&[(0, 1.0), (1, 1.0)], Relation::Eq, 5.0));
        p.objective = Some(Objective {
            sense: Sense::Minimize,
            coeffs: vec![(1, 1.0)],
        });
        let out = solve(&p, &LpConfig::default());
        assert_eq!(out.status, LpStatus::Optimal);
        let x = out.point.unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((x[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables_work() {
        // Minimize x over {x = y - 4, y in [0, 1]}, x free.
        let mut p = LpProblem::new(2);
        p.lower = vec![f64::NEG_INFINITY, 0.0];
        p.upper = vec![f64::INFINITY, 1.0];
        p.rows.push(row(&[(0, 1.0), (1, -1.0)], Relation::Eq, -4.0));
        p.objective = Some(Objective {
            sense: Sense::Minimize,
            coeffs: vec![(0, 1.0)],
        });
        let out = solve(&p, &LpConfig::default());
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective.unwrap() + 4.0).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_vertex_enumeration_on_random_lps() {
        let mut rng = StdRng::seed_from_u64(42);
        let cfg = LpConfig::default();
        let mut feasible_seen = 0;
        let mut infeasible_seen = 0;
        for case in 0..100 {
            let n = rng.random_range(2..=5);
            let m = rng.random_range(1..=5);
            let p = random_lp(&mut rng, n, m);
            let out = solve(&p, &cfg);
            let (oracle_feasible, oracle_obj) = lp_vertex_oracle(&p, 1e-7);
            match out.status {
                LpStatus::Optimal => {
                    feasible_seen += 1;
                    assert!(oracle_feasible, "case {case}: solver feasible, oracle not");
                    let got = out.objective.unwrap();
                    let want = oracle_obj.unwrap();
                    assert!(
                        (got - want).abs() <= 1e-6 * (1.0 + want.abs()),
                        "case {case}: objective {got} vs oracle {want}"
                    );
                }
                LpStatus::Infeasible => {
                    infeasible_seen += 1;
                    assert!(!oracle_feasible, "case {case}: solver infeasible, oracle found a vertex");
                }
                other => panic!("case {case}: unexpected status {other:?}"),
            }
        }
        // The generator should produce a healthy mix.
        assert!(feasible_seen >= 20, "only {feasible_seen} feasible cases");
        assert!(infeasible_seen >= 10, "only {infeasible_seen} infeasible cases");
    }

    #[test]
    fn deterministic_across_repeated_runs() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let p = random_lp(&mut rng, 4, 4);
            let a = solve(&p, &LpConfig::default());
            let b = solve(&p, &LpConfig::default());
            let c = solve(&p, &LpConfig::default());
            assert_eq!(a.status, b.status);
            assert_eq!(b.status, c.status);
            assert_eq!(a.iterations, b.iterations);
            assert_eq!(b.iterations, c.iterations);
            assert_eq!(a.point, b.point);
            assert_eq!(b.point, c.point);
        }
    }

    #[test]
    fn row_scaling_does_not_change_status() {
        let mut rng = StdRng::seed_from_u64(133);
        for _ in 0..40 {
            let p = random_lp(&mut rng, 4, 3);
            let base = solve(&p, &LpConfig::default()).status;
            let mut scaled = p.clone();
            for row in &mut scaled.rows {
                let s = rng.random_range(0.1..10.0);
                for (_, c) in &mut row.coeffs {
                    *c *= s;
                }
                row.rhs *= s;
            }
            assert_eq!(solve(&scaled, &LpConfig::default()).status, base);
        }
    }

    #[test]
    fn feasible_points_satisfy_raw_rows() {
        let mut rng = StdRng::seed_from_u64(71);
        for _ in 0..50 {
            let p = random_lp(&mut rng, 5, 5);
            let out = solve(&p, &LpConfig::default());
            if out.status == LpStatus::Optimal {
                let x = out.point.unwrap();
                for r in &p.rows {
                    assert!(r.violation(&x) <= 1e-6, "violation {}", r.violation(&x));
                }
            }
        }
    }

    #[test]
    fn certify_mode_confirms_random_infeasible_lps() {
        let mut rng = StdRng::seed_from_u64(55);
        let cfg = LpConfig {
            certify: true,
            ..LpConfig::default()
        };
        let mut checked = 0;
        for _ in 0..200 {
            let p = random_lp(&mut rng, 4, 4);
            let plain = solve(&p, &LpConfig::default());
            if plain.status == LpStatus::Infeasible {
                let certified = solve(&p, &cfg);
                assert_eq!(certified.status, LpStatus::Infeasible);
                checked += 1;
            }
        }
        assert!(checked >= 20, "only {checked} infeasible cases certified");
    }
}
