//! Core convex-set types: multi-channel heatmaps, zonotopes, halfspace
//! polytopes, integer boxes, and element-wise bound computations.
//!
//! Conventions used throughout the crate:
//! - Pixels are addressed 1-based as `(h, w)` with `h ∈ 1..=H`, `w ∈ 1..=W`.
//! - The flattened pixel index is `j = (h - 1) * W + w`, also 1-based, so the
//!   center pixel of a 3×3 grid is `j = 5` and the bottom-right is `j = 9`.
//! - Channels are 1-based: channel `i` belongs to keypoint `i`.
//!
//! Storage is 0-based row-major internally; the 1-based convention applies at
//! every public accessor that takes a flattened index or coordinate.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A stack of `K` heatmaps over an `H`×`W` pixel grid, stored as an `HW`×`K`
/// matrix (one column per channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    h: usize,
    w: usize,
    k: usize,
    /// Row-major: `data[(j - 1) * k + (i - 1)]` is pixel `j`, channel `i`.
    data: Vec<f64>,
}

impl Heatmap {
    /// Build from flat data of length `h * w * k`, pixel-major.
    pub fn new(h: usize, w: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || k == 0 {
            return Err(Error::Invalid {
                kind: "heatmap",
                reason: format!("dimensions must be positive, got {h}x{w}x{k}"),
            });
        }
        if data.len() != h * w * k {
            return Err(Error::ShapeMismatch(format!(
                "heatmap data has {} entries, expected {}x{}x{} = {}",
                data.len(),
                h,
                w,
                k,
                h * w * k
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("heatmap entry {v}")));
        }
        Ok(Self { h, w, k, data })
    }

    /// All-zero heatmap stack.
    pub fn zeros(h: usize, w: usize, k: usize) -> Self {
        Self {
            h,
            w,
            k,
            data: vec![0.0; h * w * k],
        }
    }

    /// Grid height in pixels.
    pub fn height(&self) -> usize {
        self.h
    }

    /// Grid width in pixels.
    pub fn width(&self) -> usize {
        self.w
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.k
    }

    /// Number of pixels `H * W`.
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// `(H, W, K)` triple.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.k)
    }

    /// Value at flattened pixel `j` (1-based) and channel `i` (1-based).
    pub fn get(&self, j: usize, i: usize) -> f64 {
        debug_assert!(j >= 1 && j <= self.pixels() && i >= 1 && i <= self.k);
        self.data[(j - 1) * self.k + (i - 1)]
    }

    /// Mutable access, same indexing as [`Heatmap::get`].
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.data[(j - 1) * self.k + (i - 1)] = v;
    }

    /// Flattened index of pixel `(h, w)`, all 1-based.
    pub fn flat_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row >= 1 && row <= self.h && col >= 1 && col <= self.w);
        (row - 1) * self.w + col
    }

    /// Pixel coordinate `(h, w)` of flattened index `j`, all 1-based.
    pub fn coords_of(&self, j: usize) -> (usize, usize) {
        debug_assert!(j >= 1 && j <= self.pixels());
        ((j - 1) / self.w + 1, (j - 1) % self.w + 1)
    }

    /// Flat pixel-major data slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Maximum value of channel `i` together with every flattened index that
    /// attains it exactly (ascending). Exact float equality is deliberate:
    /// the adversarial argmax semantics treat only exact ties as ties.
    pub fn channel_argmax(&self, i: usize) -> (f64, Vec<usize>) {
        let mut best = f64::NEG_INFINITY;
        let mut at = Vec::new();
        for j in 1..=self.pixels() {
            let v = self.get(j, i);
            if v > best {
                best = v;
                at.clear();
                at.push(j);
            } else if v == best {
                at.push(j);
            }
        }
        (best, at)
    }
}

/// Zonotope over an `HW`×`K` heatmap grid: `{ C + Σ_k alpha_k · G_k : alpha_k ∈ [-1, 1] }`.
///
/// Each generator spans all channels, so one coefficient scales a full
/// `HW`×`K` slab. `m = 0` denotes the singleton set `{C}`. All-zero
/// generators are permitted; they contribute nothing to the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: Heatmap,
    generators: Vec<Heatmap>,
}

impl Zonotope {
    /// Build a zonotope, checking that every generator matches the center's shape.
    pub fn new(center: Heatmap, generators: Vec<Heatmap>) -> Result<Self> {
        for (idx, g) in generators.iter().enumerate() {
            if g.dims() != center.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "generator {} has dims {:?}, center has {:?}",
                    idx + 1,
                    g.dims(),
                    center.dims()
                )));
            }
        }
        Ok(Self { center, generators })
    }

    /// Singleton set `{c}`.
    pub fn singleton(center: Heatmap) -> Self {
        Self {
            center,
            generators: Vec::new(),
        }
    }

    /// Center heatmap `C`.
    pub fn center(&self) -> &Heatmap {
        &self.center
    }

    /// Generator slabs `G_1 .. G_m`.
    pub fn generators(&self) -> &[Heatmap] {
        &self.generators
    }

    /// Number of generators `m`.
    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// `(H, W, K)` of the underlying grid.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.center.dims()
    }

    /// Element-wise lower/upper bounds of every point in the set:
    /// `lower[j,i] = C[j,i] - Σ_k |G_k[j,i]|` and the mirrored upper bound.
    ///
    /// Accumulation runs over generators in order, matching
    /// [`Zonotope::sample`], so the extreme sign pattern reproduces the bound
    /// bit-for-bit.
    pub fn bounds(&self) -> BoundsMatrix {
        let (h, w, k) = self.dims();
        let mut lower = self.center.clone();
        let mut upper = self.center.clone();
        for j in 1..=h * w {
            for i in 1..=k {
                let mut lo = self.center.get(j, i);
                let mut up = lo;
                for g in &self.generators {
                    let a = g.get(j, i).abs();
                    lo -= a;
                    up += a;
                }
                lower.set(j, i, lo);
                upper.set(j, i, up);
            }
        }
        BoundsMatrix { lower, upper }
    }

    /// The point `C + Σ_k alpha[k] · G_k`. Rejects coefficient vectors of the
    /// wrong length or outside `[-1, 1]`.
    pub fn sample(&self, alpha: &[f64]) -> Result<Heatmap> {
        if alpha.len() != self.generators.len() {
            return Err(Error::ShapeMismatch(format!(
                "alpha has {} coefficients, zonotope has {} generators",
                alpha.len(),
                self.generators.len()
            )));
        }
        for (idx, &a) in alpha.iter().enumerate() {
            if !a.is_finite() || a.abs() > 1.0 {
                return Err(Error::CoefficientOutOfRange(format!(
                    "alpha[{}] = {a} not in [-1, 1]",
                    idx + 1
                )));
            }
        }
        let (h, w, k) = self.dims();
        let mut out = self.center.clone();
        for j in 1..=h * w {
            for i in 1..=k {
                let mut v = self.center.get(j, i);
                for (g, &a) in self.generators.iter().zip(alpha) {
                    v += a * g.get(j, i);
                }
                out.set(j, i, v);
            }
        }
        Ok(out)
    }

    /// Zonotope containing the convex hull of `vertices`.
    ///
    /// See [`hull_generators`] for the two constructions. The vertices must
    /// share a shape; at least one is required.
    pub fn from_hull(vertices: &[Heatmap], mode: HullMode) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Invalid {
                kind: "hull",
                reason: "need at least one vertex".into(),
            });
        }
        let dims = vertices[0].dims();
        for (idx, v) in vertices.iter().enumerate() {
            if v.dims() != dims {
                return Err(Error::ShapeMismatch(format!(
                    "hull vertex {} has dims {:?}, expected {:?}",
                    idx + 1,
                    v.dims(),
                    dims
                )));
            }
        }
        let flats: Vec<&[f64]> = vertices.iter().map(|v| v.data()).collect();
        let (center, gens) = hull_generators(&flats, mode)?;
        let (h, w, k) = dims;
        Ok(Self {
            center: Heatmap::new(h, w, k, center)?,
            generators: gens
                .into_iter()
                .map(|g| Heatmap::new(h, w, k, g))
                .collect::<Result<_>>()?,
        })
    }
}

/// How [`hull_generators`] over-approximates a convex hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HullMode {
    /// One generator `(X_i - X_0) / 2` per non-base vertex, center
    /// `X_0 + Σ_i g_i`. Any hull point `X_0 + Σ ω_i (X_i - X_0)` with
    /// `ω_i ≥ 0`, `Σ ω_i ≤ 1` has coordinates `2ω_i - 1 ∈ [-1, 1]`, so the
    /// hull is contained. A two-vertex hull is reproduced exactly.
    BaseVertex,
    /// Axis-aligned interval hull: entry-wise min/max over the vertices, one
    /// independent generator per entry with nonzero width. Looser, but the
    /// generator count is bounded by the entry count.
    Interval,
}

/// Shape-agnostic hull over-approximation on flat vectors; returns
/// `(center, generators)`. Every input must have the same length.
pub fn hull_generators(vertices: &[&[f64]], mode: HullMode) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = vertices.len();
    if n == 0 {
        return Err(Error::Invalid {
            kind: "hull",
            reason: "need at least one vertex".into(),
        });
    }
    let len = vertices[0].len();
    if vertices.iter().any(|v| v.len() != len) {
        return Err(Error::ShapeMismatch("hull vertices differ in length".into()));
    }
    match mode {
        HullMode::BaseVertex => {
            let base = vertices[0];
            let gens: Vec<Vec<f64>> = vertices[1..]
                .iter()
                .map(|v| v.iter().zip(base).map(|(x, b)| (x - b) / 2.0).collect())
                .collect();
            let mut center = base.to_vec();
            for g in &gens {
                for (c, gv) in center.iter_mut().zip(g) {
                    *c += gv;
                }
            }
            Ok((center, gens))
        }
        HullMode::Interval => {
            let mut lo = vertices[0].to_vec();
            let mut hi = vertices[0].to_vec();
            for v in &vertices[1..] {
                for (t, &x) in lo.iter_mut().zip(v.iter()) {
                    if x < *t {
                        *t = x;
                    }
                }
                for (t, &x) in hi.iter_mut().zip(v.iter()) {
                    if x > *t {
                        *t = x;
                    }
                }
            }
            let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| (l + u) / 2.0).collect();
            let mut gens = Vec::new();
            for (idx, (l, u)) in lo.iter().zip(&hi).enumerate() {
                let radius = (u - l) / 2.0;
                if radius > 0.0 {
                    let mut g = vec![0.0; len];
                    g[idx] = radius;
                    gens.push(g);
                }
            }
            Ok((center, gens))
        }
    }
}

/// Halfspace polytope `{ x : A x ≤ b }` with `r` facets over `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl HPolytope {
    /// Build from dense facet rows; all rows must share a positive dimension.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "polytope has {} rows but {} offsets",
                a.len(),
                b.len()
            )));
        }
        let d = a[0].len();
        if d == 0 {
            return Err(Error::Invalid {
                kind: "polytope",
                reason: "dimension must be positive".into(),
            });
        }
        for (f, row) in a.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "facet {} has {} coefficients, expected {}",
                    f + 1,
                    row.len(),
                    d
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("facet {} coefficients", f + 1)));
            }
        }
        if let Some(v) = b.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("polytope offset {v}")));
        }
        Ok(Self { a, b })
    }

    /// Number of facets `r`.
    pub fn num_facets(&self) -> usize {
        self.a.len()
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.a[0].len()
    }

    /// Facet row `f` (1-based) as `(coefficients, offset)`.
    pub fn facet(&self, f: usize) -> (&[f64], f64) {
        (&self.a[f - 1], self.b[f - 1])
    }

    /// Facet coefficient matrix.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    /// Facet offsets.
    pub fn offsets(&self) -> &[f64] {
        &self.b
    }

    /// `A x` for an integer point.
    pub fn evaluate_int(&self, x: &[i64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(c, &v)| c * v as f64).sum())
            .collect()
    }

    /// Whether the integer point satisfies every facet.
    pub fn contains_int(&self, x: &[i64]) -> bool {
        self.violated_facets_int(x).is_empty()
    }

    /// 1-based facets strictly violated by the integer point (`A_f x > b_f`).
    pub fn violated_facets_int(&self, x: &[i64]) -> Vec<usize> {
        self.evaluate_int(x)
            .iter()
            .zip(&self.b)
            .enumerate()
            .filter(|(_, (lhs, rhs))| *lhs > *rhs)
            .map(|(f, _)| f + 1)
            .collect()
    }
}

/// Axis-aligned box of integer vectors, `lower[t] ≤ x[t] ≤ upper[t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerBox {
    lower: Vec<i64>,
    upper: Vec<i64>,
}

impl IntegerBox {
    /// Build, requiring `lower[t] ≤ upper[t]` in every component.
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::ShapeMismatch(format!(
                "box lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (t, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l > u {
                return Err(Error::Invalid {
                    kind: "integer box",
                    reason: format!("component {t}: lower {l} > upper {u}"),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Dimension of the box.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Component bounds `(lower[t], upper[t])`, 0-based `t`.
    pub fn component(&self, t: usize) -> (i64, i64) {
        (self.lower[t], self.upper[t])
    }

    /// Lower corner.
    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    /// Upper corner.
    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    /// Whether the point lies inside the box.
    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Number of integer points, saturating at `u128::MAX`.
    pub fn num_points(&self) -> u128 {
        let mut n: u128 = 1;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            let width = (u - l + 1) as u128;
            n = n.saturating_mul(width);
        }
        n
    }

    /// Iterate all integer points in lexicographic order.
    pub fn iter_points(&self) -> BoxPointIter<'_> {
        BoxPointIter {
            boxref: self,
            next: Some(self.lower.clone()),
        }
    }
}

/// Lexicographic iterator over the points of an [`IntegerBox`].
pub struct BoxPointIter<'a> {
    boxref: &'a IntegerBox,
    next: Option<Vec<i64>>,
}

impl Iterator for BoxPointIter<'_> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        let current = self.next.take()?;
        // Advance like an odometer: bump the last incrementable component,
        // reset everything after it.
        let mut succ = current.clone();
        let mut t = succ.len();
        loop {
            if t == 0 {
                self.next = None;
                break;
            }
            t -= 1;
            if succ[t] < self.boxref.upper[t] {
                succ[t] += 1;
                succ[t + 1..].copy_from_slice(&self.boxref.lower[t + 1..]);
                self.next = Some(succ);
                break;
            }
        }
        Some(current)
    }
}

/// Element-wise lower/upper bounds over an `HW`×`K` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMatrix {
    lower: Heatmap,
    upper: Heatmap,
}

impl BoundsMatrix {
    /// Build from two grids of matching shape with `lower ≤ upper` everywhere.
    pub fn new(lower: Heatmap, upper: Heatmap) -> Result<Self> {
        if lower.dims() != upper.dims() {
            return Err(Error::ShapeMismatch(format!(
                "bounds dims {:?} vs {:?}",
                lower.dims(),
                upper.dims()
            )));
        }
        for j in 1..=lower.pixels() {
            for i in 1..=lower.channels() {
                if lower.get(j, i) > upper.get(j, i) {
                    return Err(Error::Invalid {
                        kind: "bounds matrix",
                        reason: format!(
                            "lower[{j},{i}] = {} > upper[{j},{i}] = {}",
                            lower.get(j, i),
                            upper.get(j, i)
                        ),
                    });
                }
            }
        }
        Ok(Self { lower, upper })
    }

    /// Lower-bound grid.
    pub fn lower(&self) -> &Heatmap {
        &self.lower
    }

    /// Upper-bound grid.
    pub fn upper(&self) -> &Heatmap {
        &self.upper
    }

    /// `(lower, upper)` at flattened pixel `j`, channel `i` (1-based).
    pub fn at(&self, j: usize, i: usize) -> (f64, f64) {
        (self.lower.get(j, i), self.upper.get(j, i))
    }

    /// Whether the grid lies within the bounds, entry-wise, within `tol`.
    pub fn contains(&self, point: &Heatmap, tol: f64) -> bool {
        if point.dims() != self.lower.dims() {
            return false;
        }
        for j in 1..=point.pixels() {
            for i in 1..=point.channels() {
                let v = point.get(j, i);
                let (lo, up) = self.at(j, i);
                if v < lo - tol || v > up + tol {
                    return false;
                }
            }
        }
        true
    }
}
