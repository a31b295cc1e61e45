//! Builds the falsification program and decodes feasible assignments.
//!
//! The program asks: does the reachable set contain heatmaps whose
//! per-channel maxima sit at pixels whose *joint* deviation leaves the
//! allowed polytope? Its pieces, per keypoint/channel `i`:
//!
//! - reachable-set rows tying each retained heatmap value `Z[j,i]` to the
//!   generator coefficients;
//! - integer deviation variables `dv` confined to the image-bound box;
//! - facet indicators `r` with a Big-M encoding of "outside at least one
//!   facet", using the per-facet tightened constants;
//! - a binary indicator row `ind[j,i]` selecting the pixel at the perturbed
//!   coordinate (the dynamic indexing gadget), linked to `dv` through the
//!   flattening arithmetic;
//! - masked copies `masked[j,i]` that equal `Z[j,i]` where the indicator is
//!   set and zero elsewhere, summed into the selected value `peak[i]`;
//! - maximality rows `peak[i] ≥ Z[j,i]` over the kept in-bound indices.
//!
//! Infeasibility of the program certifies robustness. The model is pure
//! data; solving lives in [`crate::milp`].

use crate::geometry::{BoundsMatrix, Heatmap};
use crate::lp::{LinRow, LpProblem, Relation};
use crate::problem::{deviation_box, IndexSets, ProblemInstance};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;

/// Variable kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Real-valued.
    Continuous,
    /// Integer restricted to `{0, 1}`.
    Binary,
    /// General bounded integer.
    Integer,
}

/// What a model variable means. Indices are 1-based throughout: `j` is a
/// flattened pixel, `i` a channel/keypoint, `t` a deviation component, `f` a
/// facet, `k` a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarRole {
    /// Generator coefficient `alpha_k ∈ [-1, 1]`.
    Alpha(usize),
    /// Heatmap value at pixel `j`, channel `i`.
    Heat(usize, usize),
    /// Joint deviation component `t ∈ 1..=2K`.
    Deviation(usize),
    /// Binary indicator that facet `f` is violated.
    Facet(usize),
    /// Binary pixel-selection indicator at `(j, i)`.
    Indicator(usize, usize),
    /// Masked heatmap copy at `(j, i)`.
    Masked(usize, usize),
    /// Value of channel `i` at the selected pixel.
    Peak(usize),
}

impl fmt::Display for VarRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarRole::Alpha(k) => write!(f, "alpha[{k}]"),
            VarRole::Heat(j, i) => write!(f, "heat[{j},{i}]"),
            VarRole::Deviation(t) => write!(f, "dev[{t}]"),
            VarRole::Facet(r) => write!(f, "facet[{r}]"),
            VarRole::Indicator(j, i) => write!(f, "ind[{j},{i}]"),
            VarRole::Masked(j, i) => write!(f, "masked[{j},{i}]"),
            VarRole::Peak(i) => write!(f, "peak[{i}]"),
        }
    }
}

/// A model variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    /// Dense id, position in the model's variable list.
    pub id: usize,
    /// Continuous / binary / integer.
    pub kind: VarKind,
    /// Lower bound.
    pub lower: f64,
    /// Upper bound.
    pub upper: f64,
    /// Meaning of the variable.
    pub role: VarRole,
}

/// Which part of the encoding a constraint row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTag {
    /// `Z[j,i] - Σ_k G_k[j,i]·alpha_k = C[j,i]`.
    Reach(usize, usize),
    /// `Σ_f r_f ≥ 1`.
    FacetCover,
    /// `P_f·dv - M_f·r_f ≥ b_f + ε - M_f`.
    FacetBigM(usize),
    /// `Σ_j ind[j,i] = 1`.
    IndicatorSum(usize),
    /// `Σ_j j·ind[j,i] - W·dv_{2i-1} - dv_{2i} = (v*_{2i-1}-1)·W + v*_{2i}`.
    IndexLink(usize),
    /// `masked[j,i] ≥ lower[j,i]·ind[j,i]`.
    MaskLo(usize, usize),
    /// `masked[j,i] ≤ upper[j,i]·ind[j,i]`.
    MaskHi(usize, usize),
    /// `masked[j,i] ≤ Z[j,i] - lower[j,i]·(1 - ind[j,i])`.
    MaskLinkLo(usize, usize),
    /// `masked[j,i] ≥ Z[j,i] - upper[j,i]·(1 - ind[j,i])`.
    MaskLinkHi(usize, usize),
    /// `peak[i] = Σ_j masked[j,i]`.
    PeakSum(usize),
    /// `peak[i] ≥ Z[j,i]`.
    Maximality(usize, usize),
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintTag::Reach(j, i) => write!(f, "reach[{j},{i}]"),
            ConstraintTag::FacetCover => write!(f, "cover"),
            ConstraintTag::FacetBigM(r) => write!(f, "facet[{r}]"),
            ConstraintTag::IndicatorSum(i) => write!(f, "pick_one[{i}]"),
            ConstraintTag::IndexLink(i) => write!(f, "index_link[{i}]"),
            ConstraintTag::MaskLo(j, i) => write!(f, "mask_lo[{j},{i}]"),
            ConstraintTag::MaskHi(j, i) => write!(f, "mask_hi[{j},{i}]"),
            ConstraintTag::MaskLinkLo(j, i) => write!(f, "mask_link_lo[{j},{i}]"),
            ConstraintTag::MaskLinkHi(j, i) => write!(f, "mask_link_hi[{j},{i}]"),
            ConstraintTag::PeakSum(i) => write!(f, "peak_sum[{i}]"),
            ConstraintTag::Maximality(i, j) => write!(f, "max[{i}] vs heat[{j},{i}]"),
        }
    }
}

/// A tagged linear constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpConstraint {
    /// Sparse row, relation and right-hand side.
    pub row: LinRow,
    /// Provenance tag used by exports and diagnostics.
    pub tag: ConstraintTag,
}

/// The assembled feasibility program.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    /// Declared variables, id = index.
    pub variables: Vec<Variable>,
    /// Constraint rows in deterministic build order.
    pub constraints: Vec<MilpConstraint>,
    roles: BTreeMap<VarRole, usize>,
    h: usize,
    w: usize,
    k: usize,
    m: usize,
    facets: usize,
}

impl MilpModel {
    /// Assemble a model directly from parts; used by in-crate tests to craft
    /// degenerate programs that the builder would never emit.
    #[cfg(test)]
    pub(crate) fn for_tests(
        variables: Vec<Variable>,
        constraints: Vec<MilpConstraint>,
        dims: (usize, usize, usize, usize, usize),
    ) -> Self {
        let roles = variables.iter().map(|v| (v.role, v.id)).collect();
        let (h, w, k, m, facets) = dims;
        Self {
            variables,
            constraints,
            roles,
            h,
            w,
            k,
            m,
            facets,
        }
    }

    /// Variable id for a role, if the role is instantiated.
    pub fn var(&self, role: VarRole) -> Option<usize> {
        self.roles.get(&role).copied()
    }

    /// Number of variables.
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// Count of variables of a kind.
    pub fn count_kind(&self, kind: VarKind) -> usize {
        self.variables.iter().filter(|v| v.kind == kind).count()
    }

    /// Ids of binary and general-integer variables.
    pub fn integer_ids(&self) -> Vec<usize> {
        self.variables
            .iter()
            .filter(|v| v.kind != VarKind::Continuous)
            .map(|v| v.id)
            .collect()
    }

    /// `(H, W, K, m, facets)` of the encoded instance.
    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        (self.h, self.w, self.k, self.m, self.facets)
    }

    /// Continuous relaxation as a bounded-variable LP (no objective).
    pub fn relaxation(&self) -> LpProblem {
        let mut p = LpProblem::new(self.num_vars());
        for v in &self.variables {
            p.lower[v.id] = v.lower;
            p.upper[v.id] = v.upper;
        }
        p.rows = self.constraints.iter().map(|c| c.row.clone()).collect();
        p
    }

    /// Check a dense assignment against bounds, integrality and rows.
    pub fn check_assignment(&self, x: &[f64], tol: f64) -> Result<()> {
        if x.len() != self.num_vars() {
            return Err(Error::AssignmentViolation(format!(
                "assignment has {} values, model has {} variables",
                x.len(),
                self.num_vars()
            )));
        }
        for v in &self.variables {
            let val = x[v.id];
            if val < v.lower - tol || val > v.upper + tol {
                return Err(Error::AssignmentViolation(format!(
                    "{} = {val} outside [{}, {}]",
                    v.role, v.lower, v.upper
                )));
            }
            if v.kind != VarKind::Continuous && (val - val.round()).abs() > tol {
                return Err(Error::AssignmentViolation(format!(
                    "{} = {val} is not integral",
                    v.role
                )));
            }
        }
        for c in &self.constraints {
            let viol = c.row.violation(x);
            if viol > tol {
                return Err(Error::AssignmentViolation(format!(
                    "constraint {} violated by {viol:.3e}",
                    c.tag
                )));
            }
        }
        Ok(())
    }

    /// Plain-text dump of the whole program, one variable or constraint per
    /// line, in stable build order. Lines:
    ///
    /// ```text
    /// kpcert-milp v1
    /// grid <H>x<W> channels <K> generators <m> facets <r>
    /// vars <N>
    /// x<id> <kind> [<lb>, <ub>] <role>
    /// rows <M>
    /// <tag>: <coeff> x<id> ... <rel> <rhs>
    /// ```
    pub fn export_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "kpcert-milp v1");
        let _ = writeln!(
            out,
            "grid {}x{} channels {} generators {} facets {}",
            self.h, self.w, self.k, self.m, self.facets
        );
        let _ = writeln!(out, "vars {}", self.num_vars());
        for v in &self.variables {
            let kind = match v.kind {
                VarKind::Continuous => "continuous",
                VarKind::Binary => "binary",
                VarKind::Integer => "integer",
            };
            let _ = writeln!(
                out,
                "x{} {} [{}, {}] {}",
                v.id, kind, v.lower, v.upper, v.role
            );
        }
        let _ = writeln!(out, "rows {}", self.constraints.len());
        for c in &self.constraints {
            let _ = write!(out, "{}:", c.tag);
            for &(id, coeff) in &c.row.coeffs {
                let _ = write!(out, " {:+} x{}", coeff, id);
            }
            let _ = writeln!(out, " {} {}", c.row.rel.symbol(), c.row.rhs);
        }
        out
    }
}

struct ModelBuilder {
    variables: Vec<Variable>,
    constraints: Vec<MilpConstraint>,
    roles: BTreeMap<VarRole, usize>,
}

impl ModelBuilder {
    fn add_var(&mut self, kind: VarKind, lower: f64, upper: f64, role: VarRole) -> usize {
        let id = self.variables.len();
        let prev = self.roles.insert(role, id);
        debug_assert!(prev.is_none(), "duplicate role {role}");
        self.variables.push(Variable {
            id,
            kind,
            lower,
            upper,
            role,
        });
        id
    }

    fn add_row(&mut self, tag: ConstraintTag, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) {
        self.constraints.push(MilpConstraint {
            row: LinRow { coeffs, rel, rhs },
            tag,
        });
    }
}

/// Assemble the falsification program for an instance over prepared index
/// sets, zonotope bounds, and tightened Big-M constants. Pruning is decided
/// upstream by which [`IndexSets`] are passed in; the builder instantiates
/// heatmap, indicator and masked variables only over each channel's retained
/// indices.
pub fn build_milp(
    inst: &ProblemInstance,
    sets: &IndexSets,
    bounds: &BoundsMatrix,
    big_m: &[f64],
) -> Result<MilpModel> {
    let (h, w, k) = inst.reach_set().dims();
    let hw = h * w;
    let m = inst.reach_set().num_generators();
    let poly = inst.deviation_polytope();
    if sets.per_keypoint.len() != k {
        return Err(Error::Invalid {
            kind: "index sets",
            reason: format!("{} keypoints in sets, instance has {k}", sets.per_keypoint.len()),
        });
    }
    if big_m.len() != poly.num_facets() {
        return Err(Error::Invalid {
            kind: "big-m vector",
            reason: format!(
                "{} entries for {} facets",
                big_m.len(),
                poly.num_facets()
            ),
        });
    }
    for (idx, kp) in sets.per_keypoint.iter().enumerate() {
        for &j in kp.in_kept.iter().chain(&kp.out_kept).chain(&kp.in_bound) {
            if j < 1 || j > hw {
                return Err(Error::Invalid {
                    kind: "index sets",
                    reason: format!("keypoint {} references pixel {j} of {hw}", idx + 1),
                });
            }
        }
    }

    let mut b = ModelBuilder {
        variables: Vec::new(),
        constraints: Vec::new(),
        roles: BTreeMap::new(),
    };

    // Variables, in fixed role order.
    for g in 1..=m {
        b.add_var(VarKind::Continuous, -1.0, 1.0, VarRole::Alpha(g));
    }
    let retained: Vec<Vec<usize>> = (1..=k)
        .map(|i| sets.keypoint(i).retained())
        .collect();
    for i in 1..=k {
        for &j in &retained[i - 1] {
            let (lo, up) = bounds.at(j, i);
            b.add_var(VarKind::Continuous, lo, up, VarRole::Heat(j, i));
        }
    }
    let dev_box = deviation_box(inst);
    for t in 1..=2 * k {
        let (lo, up) = dev_box.component(t - 1);
        b.add_var(VarKind::Integer, lo as f64, up as f64, VarRole::Deviation(t));
    }
    for f in 1..=poly.num_facets() {
        b.add_var(VarKind::Binary, 0.0, 1.0, VarRole::Facet(f));
    }
    for i in 1..=k {
        for &j in &retained[i - 1] {
            b.add_var(VarKind::Binary, 0.0, 1.0, VarRole::Indicator(j, i));
        }
    }
    for i in 1..=k {
        for &j in &retained[i - 1] {
            let (lo, up) = bounds.at(j, i);
            b.add_var(
                VarKind::Continuous,
                lo.min(0.0),
                up.max(0.0),
                VarRole::Masked(j, i),
            );
        }
    }
    for i in 1..=k {
        let lo = retained[i - 1]
            .iter()
            .map(|&j| bounds.at(j, i).0)
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        let up = retained[i - 1]
            .iter()
            .map(|&j| bounds.at(j, i).1)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        b.add_var(VarKind::Continuous, lo, up, VarRole::Peak(i));
    }

    let var = |b: &ModelBuilder, role: VarRole| -> usize {
        *b.roles.get(&role).expect("role instantiated above")
    };

    // Reachable-set rows: Z[j,i] - Σ_g G_g[j,i]·alpha_g = C[j,i].
    let center = inst.reach_set().center();
    for i in 1..=k {
        for &j in &retained[i - 1] {
            let mut coeffs = vec![(var(&b, VarRole::Heat(j, i)), 1.0)];
            for (g, gen) in inst.reach_set().generators().iter().enumerate() {
                let c = gen.get(j, i);
                if c != 0.0 {
                    coeffs.push((var(&b, VarRole::Alpha(g + 1)), -c));
                }
            }
            b.add_row(
                ConstraintTag::Reach(j, i),
                coeffs,
                Relation::Eq,
                center.get(j, i),
            );
        }
    }

    // At least one facet must be violated.
    b.add_row(
        ConstraintTag::FacetCover,
        (1..=poly.num_facets())
            .map(|f| (var(&b, VarRole::Facet(f)), 1.0))
            .collect(),
        Relation::Ge,
        1.0,
    );
    // Big-M rows: P_f·dv - M_f·r_f ≥ b_f + ε - M_f.
    for f in 1..=poly.num_facets() {
        let (coeffs, offset) = poly.facet(f);
        let mut row: Vec<(usize, f64)> = coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(t, &c)| (var(&b, VarRole::Deviation(t + 1)), c))
            .collect();
        row.push((var(&b, VarRole::Facet(f)), -big_m[f - 1]));
        b.add_row(
            ConstraintTag::FacetBigM(f),
            row,
            Relation::Ge,
            offset + inst.epsilon() - big_m[f - 1],
        );
    }

    // Dynamic indexing per channel.
    for i in 1..=k {
        b.add_row(
            ConstraintTag::IndicatorSum(i),
            retained[i - 1]
                .iter()
                .map(|&j| (var(&b, VarRole::Indicator(j, i)), 1.0))
                .collect(),
            Relation::Eq,
            1.0,
        );
        let (gr, gc) = inst.keypoint(i);
        let mut coeffs: Vec<(usize, f64)> = retained[i - 1]
            .iter()
            .map(|&j| (var(&b, VarRole::Indicator(j, i)), j as f64))
            .collect();
        coeffs.push((var(&b, VarRole::Deviation(2 * i - 1)), -(w as f64)));
        coeffs.push((var(&b, VarRole::Deviation(2 * i)), -1.0));
        b.add_row(
            ConstraintTag::IndexLink(i),
            coeffs,
            Relation::Eq,
            ((gr - 1) * w as i64 + gc) as f64,
        );
    }

    // Masked copies.
    for i in 1..=k {
        for &j in &retained[i - 1] {
            let (lo, up) = bounds.at(j, i);
            let masked = var(&b, VarRole::Masked(j, i));
            let ind = var(&b, VarRole::Indicator(j, i));
            let heat = var(&b, VarRole::Heat(j, i));
            b.add_row(
                ConstraintTag::MaskLo(j, i),
                vec![(masked, 1.0), (ind, -lo)],
                Relation::Ge,
                0.0,
            );
            b.add_row(
                ConstraintTag::MaskHi(j, i),
                vec![(masked, 1.0), (ind, -up)],
                Relation::Le,
                0.0,
            );
            b.add_row(
                ConstraintTag::MaskLinkLo(j, i),
                vec![(masked, 1.0), (heat, -1.0), (ind, -lo)],
                Relation::Le,
                -lo,
            );
            b.add_row(
                ConstraintTag::MaskLinkHi(j, i),
                vec![(masked, 1.0), (heat, -1.0), (ind, -up)],
                Relation::Ge,
                -up,
            );
        }
    }

    // Selected values and maximality over kept in-bound indices.
    for i in 1..=k {
        let mut coeffs = vec![(var(&b, VarRole::Peak(i)), 1.0)];
        for &j in &retained[i - 1] {
            coeffs.push((var(&b, VarRole::Masked(j, i)), -1.0));
        }
        b.add_row(ConstraintTag::PeakSum(i), coeffs, Relation::Eq, 0.0);
    }
    for i in 1..=k {
        for &j in &sets.keypoint(i).in_kept {
            b.add_row(
                ConstraintTag::Maximality(i, j),
                vec![
                    (var(&b, VarRole::Peak(i)), 1.0),
                    (var(&b, VarRole::Heat(j, i)), -1.0),
                ],
                Relation::Ge,
                0.0,
            );
        }
    }

    Ok(MilpModel {
        variables: b.variables,
        constraints: b.constraints,
        roles: b.roles,
        h,
        w,
        k,
        m,
        facets: poly.num_facets(),
    })
}

/// Per-channel argmax summary inside a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ChannelArgmax {
    /// Channel / keypoint index (1-based).
    pub channel: usize,
    /// Maximum value of that channel.
    pub max_value: f64,
    /// Flattened indices within the tie tolerance of the maximum, ascending.
    pub indices: Vec<usize>,
}

/// Outcome of counterexample validation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    /// Per-channel maxima and their attaining index sets.
    pub per_channel: Vec<ChannelArgmax>,
    /// A per-channel selection of argmax pixels whose joint deviation leaves
    /// the polytope, when one exists.
    pub selection: Option<Vec<usize>>,
    /// 1-based facets strictly violated by `selection`.
    pub violated_facets: Vec<usize>,
    /// Whether a violating selection was found.
    pub valid: bool,
    /// True when the tie search hit the combination cap before finishing.
    pub truncated: bool,
}

/// A decoded feasible assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// Generator coefficients.
    pub alpha: Vec<f64>,
    /// Full reconstructed heatmaps (every pixel, not only retained ones).
    pub heatmaps: Heatmap,
    /// Joint integer deviation (2K entries).
    pub deviation: Vec<i64>,
    /// Facet indicator values.
    pub facet_flags: Vec<u8>,
    /// Perturbed coordinate per keypoint, `(row, col)`.
    pub perturbed_coords: Vec<(i64, i64)>,
    /// Whether the reconstruction survives adversarial argmax validation.
    pub validated: bool,
    /// Validation details.
    pub report: ValidationReport,
}

/// Cap on tie combinations explored during validation.
const TIE_COMBINATION_CAP: usize = 1 << 20;

/// Check whether some per-channel argmax selection (ties broken
/// adversarially, within `tie_tol` of each channel maximum) has a joint
/// deviation violating the polytope. `hint` is tried first when supplied.
pub fn validate_heatmaps(
    inst: &ProblemInstance,
    heatmaps: &Heatmap,
    tie_tol: f64,
    hint: Option<&[usize]>,
) -> ValidationReport {
    let k = inst.num_keypoints();
    let poly = inst.deviation_polytope();
    let mut per_channel = Vec::with_capacity(k);
    for i in 1..=k {
        let (max_value, exact) = heatmaps.channel_argmax(i);
        let indices = if tie_tol > 0.0 {
            (1..=heatmaps.pixels())
                .filter(|&j| heatmaps.get(j, i) >= max_value - tie_tol)
                .collect()
        } else {
            exact
        };
        per_channel.push(ChannelArgmax {
            channel: i,
            max_value,
            indices,
        });
    }

    let deviation_of = |selection: &[usize]| -> Vec<i64> {
        let mut dv = Vec::with_capacity(2 * k);
        for (i, &j) in selection.iter().enumerate() {
            let (row, col) = heatmaps.coords_of(j);
            let (gr, gc) = inst.keypoint(i + 1);
            dv.push(row as i64 - gr);
            dv.push(col as i64 - gc);
        }
        dv
    };

    if let Some(sel) = hint {
        let in_tie = sel
            .iter()
            .enumerate()
            .all(|(i, &j)| per_channel[i].indices.contains(&j));
        if in_tie {
            let violated = poly.violated_facets_int(&deviation_of(sel));
            if !violated.is_empty() {
                return ValidationReport {
                    per_channel,
                    selection: Some(sel.to_vec()),
                    violated_facets: violated,
                    valid: true,
                    truncated: false,
                };
            }
        }
    }

    // Lexicographic walk over the product of tie sets.
    let sizes: Vec<usize> = per_channel.iter().map(|c| c.indices.len()).collect();
    let total: usize = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .unwrap_or(usize::MAX);
    let mut cursor = vec![0usize; k];
    let mut explored = 0usize;
    loop {
        if explored >= TIE_COMBINATION_CAP {
            return ValidationReport {
                per_channel,
                selection: None,
                violated_facets: Vec::new(),
                valid: false,
                truncated: total > TIE_COMBINATION_CAP,
            };
        }
        let selection: Vec<usize> = cursor
            .iter()
            .enumerate()
            .map(|(i, &c)| per_channel[i].indices[c])
            .collect();
        let violated = poly.violated_facets_int(&deviation_of(&selection));
        if !violated.is_empty() {
            return ValidationReport {
                per_channel,
                selection: Some(selection),
                violated_facets: violated,
                valid: true,
                truncated: false,
            };
        }
        explored += 1;
        // Advance the odometer.
        let mut t = k;
        loop {
            if t == 0 {
                return ValidationReport {
                    per_channel,
                    selection: None,
                    violated_facets: Vec::new(),
                    valid: false,
                    truncated: false,
                };
            }
            t -= 1;
            if cursor[t] + 1 < sizes[t] {
                cursor[t] += 1;
                cursor[t + 1..].iter_mut().for_each(|c| *c = 0);
                break;
            }
        }
    }
}

/// Validate a decoded counterexample; the tie tolerance defaults to the
/// assignment tolerance so LP-level slack cannot spuriously reject a witness.
pub fn validate_counterexample(inst: &ProblemInstance, cex: &Counterexample) -> ValidationReport {
    let hint: Vec<usize> = cex
        .perturbed_coords
        .iter()
        .map(|&(row, col)| (row as usize - 1) * inst.width() + col as usize)
        .collect();
    validate_heatmaps(inst, &cex.heatmaps, 1e-6, Some(&hint))
}

/// Extract a [`Counterexample`] from a satisfying assignment.
///
/// The assignment is re-checked against the model first (within `tol`);
/// heatmaps are reconstructed at every pixel from the extracted
/// coefficients, and the result carries its own validation report.
pub fn decode_counterexample(
    inst: &ProblemInstance,
    model: &MilpModel,
    assignment: &[f64],
    tol: f64,
) -> Result<Counterexample> {
    model.check_assignment(assignment, tol)?;
    let (_, _, k, m, facets) = model.dims();

    let mut alpha = Vec::with_capacity(m);
    for g in 1..=m {
        let id = model.var(VarRole::Alpha(g)).expect("alpha role");
        alpha.push(assignment[id].clamp(-1.0, 1.0));
    }
    let mut deviation = Vec::with_capacity(2 * k);
    for t in 1..=2 * k {
        let id = model.var(VarRole::Deviation(t)).expect("deviation role");
        deviation.push(assignment[id].round() as i64);
    }
    let mut facet_flags = Vec::with_capacity(facets);
    for f in 1..=facets {
        let id = model.var(VarRole::Facet(f)).expect("facet role");
        facet_flags.push(assignment[id].round() as u8);
    }
    let heatmaps = inst.reach_set().sample(&alpha)?;
    let perturbed_coords: Vec<(i64, i64)> = (1..=k)
        .map(|i| {
            let (gr, gc) = inst.keypoint(i);
            (gr + deviation[2 * i - 2], gc + deviation[2 * i - 1])
        })
        .collect();

    let mut cex = Counterexample {
        alpha,
        heatmaps,
        deviation,
        facet_flags,
        perturbed_coords,
        validated: false,
        report: ValidationReport {
            per_channel: Vec::new(),
            selection: None,
            violated_facets: Vec::new(),
            valid: false,
            truncated: false,
        },
    };
    cex.report = validate_counterexample(inst, &cex);
    cex.validated = cex.report.valid;
    Ok(cex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lp::LpConfig;
    use crate::problem::{
        big_m_vector, deviation_box, in_bound_sets, prune_index_sets, unpruned_index_sets,
    };

    fn pruned_model(inst: &ProblemInstance) -> (MilpModel, IndexSets, BoundsMatrix) {
        let sets = in_bound_sets(inst, &LpConfig::default()).unwrap();
        let bounds = inst.reach_set().bounds();
        let pruned = prune_index_sets(inst, &sets, &bounds);
        let big_m = big_m_vector(inst, &deviation_box(inst));
        let model = build_milp(inst, &pruned, &bounds, &big_m).unwrap();
        (model, pruned, bounds)
    }

    #[test]
    fn build_is_deterministic() {
        let inst = fixtures::fragile_3x3();
        let (a, _, _) = pruned_model(&inst);
        let (b, _, _) = pruned_model(&inst);
        assert_eq!(a, b);
        assert_eq!(a.export_text(), b.export_text());
    }

    #[test]
    fn first_scenario_model_has_singleton_retained_sets() {
        let inst = fixtures::robust_3x3();
        let (model, sets, _) = pruned_model(&inst);
        assert_eq!(sets.keypoint(1).retained(), vec![5]);
        assert_eq!(sets.keypoint(2).retained(), vec![1]);
        // 1 alpha + 2 heat + 4 dev + 2 facet + 2 ind + 2 masked + 2 peak
        assert_eq!(model.num_vars(), 15);
        assert!(model.var(VarRole::Heat(9, 1)).is_none());
        assert!(model.var(VarRole::Heat(5, 1)).is_some());
    }

    /// The printed satisfying assignment of the counterexample scenario.
    fn second_scenario_assignment(model: &MilpModel, inst: &ProblemInstance) -> Vec<f64> {
        let mut x = vec![0.0; model.num_vars()];
        let z = inst.reach_set().sample(&[1.0]).unwrap();
        x[model.var(VarRole::Alpha(1)).unwrap()] = 1.0;
        for i in 1..=2 {
            for j in [1, 5, 9] {
                if let Some(id) = model.var(VarRole::Heat(j, i)) {
                    x[id] = z.get(j, i);
                }
            }
        }
        for (t, v) in [1.0, 1.0, 2.0, 2.0].into_iter().enumerate() {
            x[model.var(VarRole::Deviation(t + 1)).unwrap()] = v;
        }
        x[model.var(VarRole::Facet(1)).unwrap()] = 1.0;
        x[model.var(VarRole::Facet(2)).unwrap()] = 0.0;
        x[model.var(VarRole::Indicator(9, 1)).unwrap()] = 1.0;
        x[model.var(VarRole::Indicator(9, 2)).unwrap()] = 1.0;
        x[model.var(VarRole::Masked(9, 1)).unwrap()] = z.get(9, 1);
        x[model.var(VarRole::Masked(9, 2)).unwrap()] = z.get(9, 2);
        x[model.var(VarRole::Peak(1)).unwrap()] = z.get(9, 1);
        x[model.var(VarRole::Peak(2)).unwrap()] = z.get(9, 2);
        x
    }

    #[test]
    fn second_scenario_assignment_satisfies_model() {
        let inst = fixtures::fragile_3x3();
        let (model, sets, _) = pruned_model(&inst);
        assert_eq!(sets.keypoint(1).retained(), vec![5, 9]);
        assert_eq!(sets.keypoint(2).retained(), vec![1, 9]);
        let x = second_scenario_assignment(&model, &inst);
        model.check_assignment(&x, 1e-6).unwrap();
    }

    #[test]
    fn decode_produces_validated_counterexample_at_bottom_right() {
        let inst = fixtures::fragile_3x3();
        let (model, _, _) = pruned_model(&inst);
        let x = second_scenario_assignment(&model, &inst);
        let cex = decode_counterexample(&inst, &model, &x, 1e-6).unwrap();
        assert_eq!(cex.deviation, vec![1, 1, 2, 2]);
        assert_eq!(cex.perturbed_coords, vec![(3, 3), (3, 3)]);
        assert_eq!(cex.facet_flags, vec![1, 0]);
        assert!(cex.validated);
        assert_eq!(cex.report.violated_facets, vec![1]);
        // Deviation sum 6 > 1 violates the first facet only.
        assert_eq!(cex.report.selection, Some(vec![9, 9]));
    }

    #[test]
    fn corrupted_assignment_is_rejected() {
        let inst = fixtures::fragile_3x3();
        let (model, _, _) = pruned_model(&inst);
        let mut x = second_scenario_assignment(&model, &inst);
        x[model.var(VarRole::Facet(1)).unwrap()] = 0.0; // cover row breaks
        assert!(decode_counterexample(&inst, &model, &x, 1e-6).is_err());
        let mut y = second_scenario_assignment(&model, &inst);
        y[model.var(VarRole::Indicator(9, 1)).unwrap()] = 0.4; // integrality breaks
        assert!(decode_counterexample(&inst, &model, &y, 1e-6).is_err());
    }

    #[test]
    fn validation_rejects_heatmaps_peaking_at_ground_truth() {
        let inst = fixtures::robust_3x3();
        let z = inst.reach_set().sample(&[0.0]).unwrap();
        let report = validate_heatmaps(&inst, &z, 1e-6, None);
        assert!(!report.valid);
        assert!(report.selection.is_none());
        assert_eq!(report.per_channel[0].indices, vec![5]);
        assert_eq!(report.per_channel[1].indices, vec![1]);
    }

    #[test]
    fn validation_breaks_ties_adversarially() {
        // Channel max tied between ground truth (in-bound) and a far pixel:
        // the adversarial tie-break must find the violating selection.
        let mut c = Heatmap::zeros(3, 3, 1);
        c.set(1, 1, 2.0);
        c.set(9, 1, 2.0);
        let inst = crate::problem::ProblemInstance::new(
            vec![1, 1],
            crate::geometry::Zonotope::singleton(c.clone()),
            crate::geometry::HPolytope::new(vec![vec![1.0, 1.0]], vec![1.0]).unwrap(),
            1e-6,
            crate::problem::SolverLimits::default(),
        )
        .unwrap();
        let report = validate_heatmaps(&inst, &c, 0.0, None);
        assert!(report.valid);
        assert_eq!(report.selection, Some(vec![9]));
    }

    #[test]
    fn pruned_model_is_never_larger_and_shrinks_under_dominance() {
        let inst = fixtures::robust_3x3();
        let sets = in_bound_sets(&inst, &LpConfig::default()).unwrap();
        let bounds = inst.reach_set().bounds();
        let big_m = big_m_vector(&inst, &deviation_box(&inst));
        let pruned = build_milp(
            &inst,
            &prune_index_sets(&inst, &sets, &bounds),
            &bounds,
            &big_m,
        )
        .unwrap();
        let unpruned = build_milp(
            &inst,
            &unpruned_index_sets(&inst, &sets),
            &bounds,
            &big_m,
        )
        .unwrap();
        assert!(pruned.num_vars() < unpruned.num_vars());
        assert!(pruned.constraints.len() < unpruned.constraints.len());
        assert_eq!(unpruned.count_kind(VarKind::Binary), 2 + 9 + 9);

        // No dominance anywhere: both encodings have the same size.
        let flat = fixtures::instance_with_constant_bounds(3, 3, &[(2, 2)]);
        let fsets = in_bound_sets(&flat, &LpConfig::default()).unwrap();
        let fbounds = flat.reach_set().bounds();
        let fbig_m = big_m_vector(&flat, &deviation_box(&flat));
        let fp = build_milp(
            &flat,
            &prune_index_sets(&flat, &fsets, &fbounds),
            &fbounds,
            &fbig_m,
        )
        .unwrap();
        let fu = build_milp(&flat, &unpruned_index_sets(&flat, &fsets), &fbounds, &fbig_m)
            .unwrap();
        assert_eq!(fp.num_vars(), fu.num_vars());
    }

    #[test]
    fn export_text_is_stable_and_complete() {
        let inst = fixtures::robust_3x3();
        let (model, _, _) = pruned_model(&inst);
        let text = model.export_text();
        assert!(text.starts_with("kpcert-milp v1\ngrid 3x3 channels 2 generators 1 facets 2\n"));
        assert!(text.contains("x0 continuous [-1, 1] alpha[1]"));
        assert!(text.contains("cover: +1 x7 +1 x8 >= 1"));
        assert!(text.contains("index_link[1]: +5 x9 -3 x3 -1 x4 = 5"));
        assert_eq!(
            text.lines().count(),
            3 + model.num_vars() + 1 + model.constraints.len()
        );
    }

    #[test]
    fn big_m_length_mismatch_is_rejected() {
        let inst = fixtures::robust_3x3();
        let sets = in_bound_sets(&inst, &LpConfig::default()).unwrap();
        let bounds = inst.reach_set().bounds();
        let pruned = prune_index_sets(&inst, &sets, &bounds);
        assert!(build_milp(&inst, &pruned, &bounds, &[1.0]).is_err());
    }
}
