//! Coupled robustness certification for heatmap-based keypoint detectors.
//!
//! A keypoint detector predicts one heatmap per keypoint and reads each
//! keypoint off as the argmax pixel of its channel. Given a zonotope
//! over-approximation of the heatmaps reachable from a convex hull of input
//! images, and a halfspace polytope bounding the *joint* integer deviation of
//! all keypoints from their ground-truth pixels, this crate decides whether
//! any reachable heatmap can place some channel's maximum at a location whose
//! joint deviation leaves the polytope.
//!
//! The decision is a mixed-integer feasibility program: the reachable set,
//! the out-of-polytope condition (Big-M over facet indicators), a dynamic
//! indexing gadget that reads the heatmap value at the perturbed coordinate,
//! and a maximality constraint against all in-bound locations. Infeasibility
//! certifies robustness; a feasible point decodes into a counterexample
//! heatmap. Verdicts are cross-checkable against independent enumeration and
//! sampling oracles.
//!
//! Modules:
//! - [`geometry`]: zonotopes, halfspace polytopes, integer boxes, bounds.
//! - [`problem`]: problem instances, in-/out-of-bound index sets, Big-M.
//! - [`lp`]: bounded-variable two-phase simplex core.
//! - [`encode`]: the falsification MILP and counterexample decoding.
//! - [`milp`]: LP-relaxation branch-and-bound search and verdicts.
//! - [`oracle`]: enumeration / sampling / grid falsification oracles.
//! - [`reach`]: zonotope propagation through small feed-forward backbones.
//! - [`fileio`]: JSON schemas for instances, networks, images and reports.
//! - [`fixtures`]: canned instances and randomized generators for tests.

// Index-based loops are clearer than iterator chains for the dense
// matrix/tableau arithmetic in this crate.
#![allow(clippy::needless_range_loop)]

pub mod encode;
pub mod fileio;
pub mod fixtures;
pub mod geometry;
pub mod lp;
pub mod milp;
pub mod oracle;
pub mod problem;
pub mod reach;

/// Errors produced while building or solving certification problems.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or matrix was built with inconsistent dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Data contained NaN or infinite entries where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// A constructor invariant was violated.
    #[error("invalid {kind}: {reason}")]
    Invalid {
        /// Which object was rejected, e.g. "zonotope" or "instance".
        kind: &'static str,
        /// Why it was rejected.
        reason: String,
    },
    /// A coefficient vector was outside its admissible range.
    #[error("coefficient out of range: {0}")]
    CoefficientOutOfRange(String),
    /// A keypoint's projected in-bound set contains no integer deviation, so
    /// the deviation polytope can neither be satisfied nor falsified there.
    #[error("keypoint {keypoint} has an empty in-bound index set")]
    EmptyInBoundSet {
        /// 1-based keypoint index.
        keypoint: usize,
    },
    /// The LP core failed numerically (iteration limit, singular basis, or a
    /// solution that does not re-verify against the raw data).
    #[error("lp failure: {0}")]
    LpFailure(String),
    /// An enumeration was refused because it exceeds the configured cap.
    #[error("enumeration too large: {size} assignments exceeds cap {cap}")]
    EnumerationTooLarge {
        /// Number of assignments that would be visited.
        size: u128,
        /// Configured cap.
        cap: u128,
    },
    /// A solver assignment violated the model it was supposed to satisfy.
    #[error("assignment violates model: {0}")]
    AssignmentViolation(String),
    /// File or parse error from the JSON front end.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// JSON syntax or schema error, with line/column from the parser.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
