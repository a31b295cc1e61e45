//! Canned instances and randomized instance generators.
//!
//! The two 3×3 fixtures are the worked examples shipped with the tool (also
//! available as JSON under `fixtures/` in the repository): two keypoints at
//! the grid center and the top-left corner, a single-generator reachable
//! set, and the coupled deviation budget `|δh_1 + δw_1 + δh_2 + δw_2| ≤ 1`.
//! In [`robust_3x3`] the ground-truth pixels dominate every other pixel for
//! every admissible coefficient, so certification succeeds; in
//! [`fragile_3x3`] the generator can push the bottom-right pixel above both
//! ground-truth peaks, which yields the joint deviation `[1, 1, 2, 2]` with
//! deviation sum 6 — far outside the budget.

use crate::geometry::{HPolytope, Heatmap, Zonotope};
use crate::problem::{ProblemInstance, SolverLimits};
use rand::Rng;
use std::ops::RangeInclusive;

/// The coupled two-keypoint deviation polytope used by the 3×3 fixtures:
/// `δh_1 + δw_1 + δh_2 + δw_2 ≤ 1` and `≥ -1`.
pub fn coupled_budget_polytope() -> HPolytope {
    HPolytope::new(
        vec![vec![1.0, 1.0, 1.0, 1.0], vec![-1.0, -1.0, -1.0, -1.0]],
        vec![1.0, 1.0],
    )
    .expect("static polytope")
}

fn grid_3x3(channel1: [f64; 9], channel2: [f64; 9]) -> Heatmap {
    let mut m = Heatmap::zeros(3, 3, 2);
    for j in 1..=9 {
        m.set(j, 1, channel1[j - 1]);
        m.set(j, 2, channel2[j - 1]);
    }
    m
}

fn center_3x3() -> Heatmap {
    grid_3x3(
        [-5.0, -5.0, -5.0, -5.0, 0.0, -5.0, -5.0, -5.0, -5.0],
        [0.1, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0, -5.0],
    )
}

/// 3×3 fixture whose falsification search is infeasible (certified robust).
pub fn robust_3x3() -> ProblemInstance {
    let generator = grid_3x3(
        [-0.1, -0.1, -0.1, -0.1, 2.0, -0.1, -0.1, -0.1, -0.1],
        [1.0, -0.1, -0.1, -0.1, -0.1, -0.1, -0.1, -0.1, -0.1],
    );
    ProblemInstance::new(
        vec![2, 2, 1, 1],
        Zonotope::new(center_3x3(), vec![generator]).expect("static zonotope"),
        coupled_budget_polytope(),
        1e-6,
        SolverLimits::default(),
    )
    .expect("static instance")
}

/// 3×3 fixture with a counterexample: at coefficient 1 the bottom-right
/// pixel (flattened index 9) carries the maximum of both channels.
pub fn fragile_3x3() -> ProblemInstance {
    let generator = grid_3x3(
        [-0.1, -0.1, -0.1, -0.1, 2.0, -0.1, -0.1, -0.1, 7.5],
        [1.0, -0.1, -0.1, -0.1, -0.1, -0.1, -0.1, -0.1, 7.5],
    );
    ProblemInstance::new(
        vec![2, 2, 1, 1],
        Zonotope::new(center_3x3(), vec![generator]).expect("static zonotope"),
        coupled_budget_polytope(),
        1e-6,
        SolverLimits::default(),
    )
    .expect("static instance")
}

/// Degenerate 1×1 single-keypoint instance.
pub fn single_pixel_instance() -> ProblemInstance {
    ProblemInstance::new(
        vec![1, 1],
        Zonotope::singleton(Heatmap::new(1, 1, 1, vec![1.0]).unwrap()),
        HPolytope::new(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
        1e-6,
        SolverLimits::default(),
    )
    .expect("static instance")
}

/// Singleton-set instance with the given keypoints and a wide-open deviation
/// polytope; the center peaks at each ground-truth pixel.
pub fn instance_with_keypoints(h: usize, w: usize, keypoints: &[(i64, i64)]) -> ProblemInstance {
    let k = keypoints.len();
    let d = 2 * k;
    instance_with_polytope(h, w, keypoints, vec![vec![0.0; d]], vec![0.0])
}

/// Singleton-set instance with the given keypoints and deviation polytope.
pub fn instance_with_polytope(
    h: usize,
    w: usize,
    keypoints: &[(i64, i64)],
    rows: Vec<Vec<f64>>,
    offsets: Vec<f64>,
) -> ProblemInstance {
    let k = keypoints.len();
    let mut center = Heatmap::zeros(h, w, k);
    let mut ground_truth = Vec::with_capacity(2 * k);
    for (i, &(row, col)) in keypoints.iter().enumerate() {
        let j = (row as usize - 1) * w + col as usize;
        center.set(j, i + 1, 1.0);
        ground_truth.push(row);
        ground_truth.push(col);
    }
    ProblemInstance::new(
        ground_truth,
        Zonotope::singleton(center),
        HPolytope::new(rows, offsets).expect("fixture polytope"),
        1e-6,
        SolverLimits::default(),
    )
    .expect("fixture instance")
}

/// Instance whose zonotope has identical bounds at every pixel, so dominance
/// pruning removes nothing.
pub fn instance_with_constant_bounds(
    h: usize,
    w: usize,
    keypoints: &[(i64, i64)],
) -> ProblemInstance {
    let k = keypoints.len();
    let len = h * w * k;
    let center = Heatmap::new(h, w, k, vec![0.5; len]).unwrap();
    let gen = Heatmap::new(h, w, k, vec![0.25; len]).unwrap();
    let mut ground_truth = Vec::with_capacity(2 * k);
    for &(row, col) in keypoints {
        ground_truth.push(row);
        ground_truth.push(col);
    }
    ProblemInstance::new(
        ground_truth,
        Zonotope::new(center, vec![gen]).unwrap(),
        coupled_budget_polytope_for(k),
        1e-6,
        SolverLimits::default(),
    )
    .expect("fixture instance")
}

/// `|Σ δv| ≤ 1` over `2k` components.
pub fn coupled_budget_polytope_for(k: usize) -> HPolytope {
    let d = 2 * k;
    HPolytope::new(vec![vec![1.0; d], vec![-1.0; d]], vec![1.0, 1.0]).expect("static polytope")
}

/// Dimension ranges for [`random_instance`].
#[derive(Debug, Clone)]
pub struct GenParams {
    /// Grid height range.
    pub h: RangeInclusive<usize>,
    /// Grid width range.
    pub w: RangeInclusive<usize>,
    /// Keypoint count range.
    pub k: RangeInclusive<usize>,
    /// Generator count range.
    pub m: RangeInclusive<usize>,
    /// Facet count range.
    pub facets: RangeInclusive<usize>,
}

impl GenParams {
    /// Tiny instances for fast unit-test loops.
    pub fn small() -> Self {
        Self {
            h: 2..=3,
            w: 2..=3,
            k: 1..=2,
            m: 0..=2,
            facets: 1..=3,
        }
    }

    /// The widest configuration exercised by the test suites.
    pub fn medium() -> Self {
        Self {
            h: 2..=5,
            w: 2..=5,
            k: 1..=3,
            m: 0..=3,
            facets: 1..=4,
        }
    }
}

/// Draw a random instance.
///
/// Polytope data is integral (coefficients in `-2..=2`, offsets in `0..=5`),
/// which keeps the zero deviation in-bound — so every keypoint's in-bound
/// set is nonempty — and keeps integer facet values at least 1 away from the
/// boundary, well clear of the strict-inequality slack. Centers get a bump
/// at each ground-truth pixel so that robust and fragile instances both
/// occur; three-keypoint instances are clamped to 3×3 grids to keep the
/// enumeration oracles fast.
pub fn random_instance<R: Rng>(rng: &mut R, params: &GenParams) -> ProblemInstance {
    let k = rng.random_range(params.k.clone());
    let (mut hmax, mut wmax) = (*params.h.end(), *params.w.end());
    if k >= 3 {
        hmax = hmax.min(3);
        wmax = wmax.min(3);
    }
    let h = rng.random_range(*params.h.start()..=hmax);
    let w = rng.random_range(*params.w.start()..=wmax);
    let m = rng.random_range(params.m.clone());
    let facets = rng.random_range(params.facets.clone());

    let mut ground_truth = Vec::with_capacity(2 * k);
    for _ in 0..k {
        ground_truth.push(rng.random_range(1..=h as i64));
        ground_truth.push(rng.random_range(1..=w as i64));
    }

    let len = h * w * k;
    let mut center = Heatmap::new(
        h,
        w,
        k,
        (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    for i in 1..=k {
        let row = ground_truth[2 * i - 2] as usize;
        let col = ground_truth[2 * i - 1] as usize;
        let j = (row - 1) * w + col;
        center.set(j, i, center.get(j, i) + rng.random_range(0.5..3.0));
    }
    let generators: Vec<Heatmap> = (0..m)
        .map(|_| {
            let scale = rng.random_range(0.2..1.5);
            Heatmap::new(
                h,
                w,
                k,
                (0..len)
                    .map(|_| rng.random_range(-1.0..1.0) * scale)
                    .collect(),
            )
            .unwrap()
        })
        .collect();

    let d = 2 * k;
    let rows: Vec<Vec<f64>> = (0..facets)
        .map(|_| (0..d).map(|_| rng.random_range(-2..=2) as f64).collect())
        .collect();
    let offsets: Vec<f64> = (0..facets)
        .map(|_| rng.random_range(0..=5) as f64)
        .collect();

    ProblemInstance::new(
        ground_truth,
        Zonotope::new(center, generators).expect("generated zonotope"),
        HPolytope::new(rows, offsets).expect("generated polytope"),
        1e-6,
        SolverLimits::default(),
    )
    .expect("generated instance")
}

/// Draw a random bounded-variable LP with finite bounds on every variable
/// (so it is never unbounded and feasibility always has a vertex witness).
/// Used by the solver test suites together with [`lp_vertex_oracle`].
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> crate::lp::LpProblem {
    use crate::lp::{LinRow, LpProblem, Objective, Relation, Sense};
    let mut p = LpProblem::new(n);
    for j in 0..n {
        let a = rng.random_range(-4.0..2.0);
        let b = a + rng.random_range(0.0..5.0);
        p.lower[j] = a;
        p.upper[j] = b;
    }
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| {
                if rng.random_bool(0.7) {
                    Some((j, rng.random_range(-3.0..3.0)))
                } else {
                    None
                }
            })
            .collect();
        let rel = match rng.random_range(0..3) {
            0 => Relation::Le,
            1 => Relation::Ge,
            _ => Relation::Eq,
        };
        p.rows.push(LinRow {
            coeffs,
            rel,
            rhs: rng.random_range(-4.0..4.0),
        });
    }
    p.objective = Some(Objective {
        sense: if rng.random_bool(0.5) {
            Sense::Maximize
        } else {
            Sense::Minimize
        },
        coeffs: (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect(),
    });
    p
}

/// Brute-force LP oracle: enumerate candidate vertices as solutions of `n`
/// active constraints chosen among rows-at-equality and bounds, keep the
/// feasible ones, and optimize over them. Returns `(feasible, best
/// objective)`. Exponential; only for small test problems.
pub fn lp_vertex_oracle(p: &crate::lp::LpProblem, tol: f64) -> (bool, Option<f64>) {
    use crate::lp::Sense;
    let n = p.num_vars;
    #[derive(Clone, Copy)]
    enum Active {
        Row(usize),
        Lo(usize),
        Up(usize),
    }
    let mut candidates: Vec<Active> = Vec::new();
    for r in 0..p.rows.len() {
        candidates.push(Active::Row(r));
    }
    for j in 0..n {
        if p.lower[j].is_finite() {
            candidates.push(Active::Lo(j));
        }
        if p.upper[j].is_finite() {
            candidates.push(Active::Up(j));
        }
    }
    let mut best: Option<f64> = None;
    let mut feasible = false;
    let mut idx = vec![0usize; n];
    fn subsets(
        k: usize,
        start: usize,
        total: usize,
        idx: &mut Vec<usize>,
        depth: usize,
        f: &mut impl FnMut(&[usize]),
    ) {
        if depth == k {
            f(&idx[..k]);
            return;
        }
        for c in start..total {
            idx[depth] = c;
            subsets(k, c + 1, total, idx, depth + 1, f);
        }
    }
    let eval = |chosen: &[usize], feasible: &mut bool, best: &mut Option<f64>| {
        // Solve the n x n active system by Gaussian elimination.
        let mut a = vec![0.0; n * (n + 1)];
        for (row_i, &ci) in chosen.iter().enumerate() {
            match candidates[ci] {
                Active::Row(r) => {
                    for &(j, c) in &p.rows[r].coeffs {
                        a[row_i * (n + 1) + j] += c;
                    }
                    a[row_i * (n + 1) + n] = p.rows[r].rhs;
                }
                Active::Lo(j) => {
                    a[row_i * (n + 1) + j] = 1.0;
                    a[row_i * (n + 1) + n] = p.lower[j];
                }
                Active::Up(j) => {
                    a[row_i * (n + 1) + j] = 1.0;
                    a[row_i * (n + 1) + n] = p.upper[j];
                }
            }
        }
        for col in 0..n {
            let mut piv = col;
            let mut bestv = a[col * (n + 1) + col].abs();
            for r in col + 1..n {
                let v = a[r * (n + 1) + col].abs();
                if v > bestv {
                    bestv = v;
                    piv = r;
                }
            }
            if bestv < 1e-9 {
                return; // singular active set
            }
            if piv != col {
                for t in 0..=n {
                    a.swap(col * (n + 1) + t, piv * (n + 1) + t);
                }
            }
            let d = a[col * (n + 1) + col];
            for t in 0..=n {
                a[col * (n + 1) + t] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r * (n + 1) + col];
                    if f != 0.0 {
                        for t in 0..=n {
                            a[r * (n + 1) + t] -= f * a[col * (n + 1) + t];
                        }
                    }
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|r| a[r * (n + 1) + n]).collect();
        for j in 0..n {
            if x[j] < p.lower[j] - tol || x[j] > p.upper[j] + tol {
                return;
            }
        }
        for r in &p.rows {
            if r.violation(&x) > tol {
                return;
            }
        }
        *feasible = true;
        if let Some(obj) = &p.objective {
            let v: f64 = obj.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
            let better = match (obj.sense, *best) {
                (_, None) => true,
                (Sense::Maximize, Some(b)) => v > b,
                (Sense::Minimize, Some(b)) => v < b,
            };
            if better {
                *best = Some(v);
            }
        }
    };
    let total = candidates.len();
    if n <= total {
        let mut f = |chosen: &[usize]| eval(chosen, &mut feasible, &mut best);
        subsets(n, 0, total, &mut idx, 0, &mut f);
    }
    (feasible, best)
}

/// Derive an independent 64-bit stream seed; splits are stable across runs.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined word.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
