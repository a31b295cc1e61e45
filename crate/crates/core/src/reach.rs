//! Zonotope reachability through small feed-forward backbones.
//!
//! Affine layers (dense, convolution) map the center and every generator
//! exactly, so they add no over-approximation. Rectifier layers use the
//! single-neuron zonotope transformer: stable neurons pass through or zero
//! out; a crossing neuron with pre-activation bounds `[l, u]` (`l < 0 < u`)
//! is replaced by `λ·x - λl/2` with slope `λ = u/(u-l)` plus one fresh
//! generator of magnitude `-λl/2`, which encloses the rectifier exactly at
//! `l`, `0` and `u` and everywhere between.
//!
//! Tensor layout: spatial data is flattened row-major as `(row, col,
//! channel)`, i.e. entry `(h, w, c)` of an `H×W×C` tensor sits at flat
//! offset `((h-1)·W + (w-1))·C + (c-1)`. A 2×2 single-channel image
//! `[[1, 2], [3, 4]]` is therefore the flat vector `[1, 2, 3, 4]`. Dense
//! weights are `rows × cols` with `cols` equal to the incoming flat length;
//! convolution kernels are indexed `[out_channel][in_channel][dy][dx]`.
//! With this layout a final `H×W×K` tensor is exactly the `HW×K` heatmap
//! matrix used everywhere else (pixel-major, channel-minor).

use crate::geometry::{hull_generators, Heatmap, HullMode, Zonotope};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One backbone layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    /// Fully connected affine map on the flattened vector.
    Dense {
        /// `rows × cols` weight matrix, row-major.
        weights: Vec<Vec<f64>>,
        /// One bias per output row.
        bias: Vec<f64>,
    },
    /// 2-D convolution with zero padding.
    Conv2d {
        /// `[out_channel][in_channel][dy][dx]`.
        kernel: Vec<Vec<Vec<Vec<f64>>>>,
        /// One bias per output channel.
        bias: Vec<f64>,
        /// Spatial stride (same in both directions).
        stride: usize,
        /// Zero padding (same on all sides).
        pad: usize,
    },
    /// Element-wise rectifier.
    Relu,
    /// Drop spatial structure; data is already row-major so this is a
    /// shape-only operation.
    Flatten,
    /// Interpret the flat vector as an `H×W×K` heatmap stack.
    Reshape {
        /// Target height.
        h: usize,
        /// Target width.
        w: usize,
        /// Target channel count.
        k: usize,
    },
}

/// An ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Layers applied first to last.
    pub layers: Vec<Layer>,
}

/// Tensor shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `H×W×C` spatial tensor.
    Spatial(usize, usize, usize),
    /// Flat vector.
    Flat(usize),
}

impl Shape {
    /// Total element count.
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial(h, w, c) => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    /// True when the shape holds no elements.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A zonotope over an arbitrarily shaped tensor, used while propagating.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorZonotope {
    /// Current shape.
    pub shape: Shape,
    /// Center vector, row-major.
    pub center: Vec<f64>,
    /// Generator vectors, same length as the center.
    pub generators: Vec<Vec<f64>>,
}

impl TensorZonotope {
    /// Wrap a concrete tensor as a singleton set.
    pub fn singleton(shape: Shape, center: Vec<f64>) -> Result<Self> {
        if center.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "center has {} entries for shape of {}",
                center.len(),
                shape.len()
            )));
        }
        Ok(Self {
            shape,
            center,
            generators: Vec::new(),
        })
    }

    /// Build from a convex hull of same-shaped tensors.
    pub fn from_hull(shape: Shape, vertices: &[Vec<f64>], mode: HullMode) -> Result<Self> {
        for v in vertices {
            if v.len() != shape.len() {
                return Err(Error::ShapeMismatch(format!(
                    "hull vertex has {} entries for shape of {}",
                    v.len(),
                    shape.len()
                )));
            }
        }
        let flats: Vec<&[f64]> = vertices.iter().map(|v| v.as_slice()).collect();
        let (center, generators) = hull_generators(&flats, mode)?;
        Ok(Self {
            shape,
            center,
            generators,
        })
    }

    /// Element-wise interval bounds.
    pub fn interval_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.center.clone();
        let mut hi = self.center.clone();
        for g in &self.generators {
            for (idx, &v) in g.iter().enumerate() {
                let a = v.abs();
                lo[idx] -= a;
                hi[idx] += a;
            }
        }
        (lo, hi)
    }

    /// Concrete member for a coefficient vector in `[-1, 1]^m`.
    pub fn sample(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.generators.len() {
            return Err(Error::ShapeMismatch(format!(
                "alpha has {} coefficients for {} generators",
                alpha.len(),
                self.generators.len()
            )));
        }
        let mut out = self.center.clone();
        for (g, &a) in self.generators.iter().zip(alpha) {
            for (idx, &v) in g.iter().enumerate() {
                out[idx] += a * v;
            }
        }
        Ok(out)
    }

    /// Convert to the heatmap-grid zonotope; the current shape must be
    /// spatial.
    pub fn into_heatmap_zonotope(self) -> Result<Zonotope> {
        let Shape::Spatial(h, w, k) = self.shape else {
            return Err(Error::ShapeMismatch(
                "network output is not a spatial tensor; add a reshape layer".into(),
            ));
        };
        let center = Heatmap::new(h, w, k, self.center)?;
        let gens = self
            .generators
            .into_iter()
            .map(|g| Heatmap::new(h, w, k, g))
            .collect::<Result<Vec<_>>>()?;
        Zonotope::new(center, gens)
    }
}

/// A materialized affine map `y = A x + b` with sparse rows.
struct AffineMap {
    rows: Vec<Vec<(usize, f64)>>,
    bias: Vec<f64>,
}

impl AffineMap {
    /// Interval arithmetic image of a box.
    fn interval_apply(&self, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut out_lo = self.bias.clone();
        let mut out_hi = self.bias.clone();
        for (row_idx, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                if c >= 0.0 {
                    out_lo[row_idx] += c * lo[j];
                    out_hi[row_idx] += c * hi[j];
                } else {
                    out_lo[row_idx] += c * hi[j];
                    out_hi[row_idx] += c * lo[j];
                }
            }
        }
        (out_lo, out_hi)
    }

    fn apply(&self, z: &TensorZonotope, out_shape: Shape) -> TensorZonotope {
        let apply_linear = |x: &[f64]| -> Vec<f64> {
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(j, c)| c * x[j]).sum())
                .collect()
        };
        let mut center = apply_linear(&z.center);
        for (c, b) in center.iter_mut().zip(&self.bias) {
            *c += b;
        }
        let generators = z.generators.iter().map(|g| apply_linear(g)).collect();
        TensorZonotope {
            shape: out_shape,
            center,
            generators,
        }
    }
}

fn dense_map(weights: &[Vec<f64>], bias: &[f64], in_len: usize) -> Result<(AffineMap, Shape)> {
    if weights.is_empty() || weights.len() != bias.len() {
        return Err(Error::ShapeMismatch(format!(
            "dense layer has {} weight rows and {} biases",
            weights.len(),
            bias.len()
        )));
    }
    let mut rows = Vec::with_capacity(weights.len());
    for (r, wrow) in weights.iter().enumerate() {
        if wrow.len() != in_len {
            return Err(Error::ShapeMismatch(format!(
                "dense row {r} has {} weights, input has {} entries",
                wrow.len(),
                in_len
            )));
        }
        if wrow.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dense row {r}")));
        }
        rows.push(
            wrow.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect(),
        );
    }
    if bias.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense bias".into()));
    }
    let out = Shape::Flat(weights.len());
    Ok((AffineMap { rows, bias: bias.to_vec() }, out))
}

fn conv_map(
    kernel: &[Vec<Vec<Vec<f64>>>],
    bias: &[f64],
    stride: usize,
    pad: usize,
    in_shape: Shape,
) -> Result<(AffineMap, Shape)> {
    let Shape::Spatial(h, w, c_in) = in_shape else {
        return Err(Error::ShapeMismatch(
            "convolution requires a spatial input".into(),
        ));
    };
    let f = kernel.len();
    if f == 0 || bias.len() != f {
        return Err(Error::ShapeMismatch(format!(
            "convolution has {f} output channels and {} biases",
            bias.len()
        )));
    }
    let kc = kernel[0].len();
    if kc != c_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let kh = kernel[0][0].len();
    let kw = kernel[0][0][0].len();
    if stride == 0 {
        return Err(Error::Invalid {
            kind: "convolution",
            reason: "stride must be at least 1".into(),
        });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kh}x{kw} does not fit a {h}x{w} input with padding {pad}"
        )));
    }
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;

    let in_index = |row: usize, col: usize, ch: usize| (row * w + col) * c_in + ch;
    let mut rows = Vec::with_capacity(h_out * w_out * f);
    let mut biases = Vec::with_capacity(h_out * w_out * f);
    for oy in 0..h_out {
        for ox in 0..w_out {
            for oc in 0..f {
                let mut taps: Vec<(usize, f64)> = Vec::new();
                for ic in 0..c_in {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = oy * stride + dy;
                            let ix = ox * stride + dx;
                            // Zero padding: taps outside the input vanish.
                            if iy < pad || ix < pad {
                                continue;
                            }
                            let (iy, ix) = (iy - pad, ix - pad);
                            if iy >= h || ix >= w {
                                continue;
                            }
                            let v = kernel[oc][ic][dy][dx];
                            if v != 0.0 {
                                taps.push((in_index(iy, ix, ic), v));
                            }
                        }
                    }
                }
                rows.push(taps);
                biases.push(bias[oc]);
            }
        }
    }
    Ok((
        AffineMap { rows, bias: biases },
        Shape::Spatial(h_out, w_out, f),
    ))
}

/// Rectifier transformer; returns the new set and how many fresh generators
/// were added (one per crossing neuron).
fn relu_transform(z: &TensorZonotope) -> (TensorZonotope, usize) {
    let (lo, hi) = z.interval_bounds();
    let n = z.center.len();
    let mut center = z.center.clone();
    let mut generators = z.generators.clone();
    let mut fresh: Vec<(usize, f64)> = Vec::new();
    for idx in 0..n {
        let (l, u) = (lo[idx], hi[idx]);
        if u <= 0.0 {
            center[idx] = 0.0;
            for g in &mut generators {
                g[idx] = 0.0;
            }
        } else if l >= 0.0 {
            // Stable positive: identity.
        } else {
            let lambda = u / (u - l);
            let mu = -lambda * l / 2.0;
            center[idx] = lambda * center[idx] + mu;
            for g in &mut generators {
                g[idx] *= lambda;
            }
            fresh.push((idx, mu));
        }
    }
    let added = fresh.len();
    for (idx, mu) in fresh {
        let mut g = vec![0.0; n];
        g[idx] = mu;
        generators.push(g);
    }
    (
        TensorZonotope {
            shape: z.shape,
            center,
            generators,
        },
        added,
    )
}

/// Push a zonotope through the network. Affine layers are exact; each
/// rectifier layer adds one generator per crossing neuron. The output
/// over-approximates the concrete image of the input set.
pub fn propagate(net: &Network, input: &TensorZonotope) -> Result<TensorZonotope> {
    let mut z = input.clone();
    for (idx, layer) in net.layers.iter().enumerate() {
        z = match layer {
            Layer::Dense { weights, bias } => {
                let (map, out) = dense_map(weights, bias, z.shape.len())
                    .map_err(|e| layer_err(idx, e))?;
                map.apply(&z, out)
            }
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (map, out) =
                    conv_map(kernel, bias, *stride, *pad, z.shape).map_err(|e| layer_err(idx, e))?;
                map.apply(&z, out)
            }
            Layer::Relu => relu_transform(&z).0,
            Layer::Flatten => TensorZonotope {
                shape: Shape::Flat(z.shape.len()),
                center: z.center,
                generators: z.generators,
            },
            Layer::Reshape { h, w, k } => {
                if h * w * k != z.shape.len() {
                    return Err(layer_err(
                        idx,
                        Error::ShapeMismatch(format!(
                            "reshape to {h}x{w}x{k} needs {} entries, have {}",
                            h * w * k,
                            z.shape.len()
                        )),
                    ));
                }
                TensorZonotope {
                    shape: Shape::Spatial(*h, *w, *k),
                    center: z.center,
                    generators: z.generators,
                }
            }
        };
    }
    Ok(z)
}

fn layer_err(idx: usize, e: Error) -> Error {
    Error::Invalid {
        kind: "network layer",
        reason: format!("layer {idx}: {e}"),
    }
}

/// Interval-only fallback propagation: collapse the input to its bounding
/// box and push one axis-aligned box through the network (interval
/// arithmetic on affine layers, clamping on rectifiers). Cheaper than the
/// zonotope transformer but drops all cross-pixel correlation; the result is
/// an axis-aligned zonotope (one generator per entry with nonzero width).
/// The two modes are incomparable in general: intervals lose correlation
/// through affine layers, while the zonotope rectifier abstraction admits
/// slightly negative values that the clamped box excludes.
pub fn propagate_interval(net: &Network, input: &TensorZonotope) -> Result<TensorZonotope> {
    let (mut lo, mut hi) = input.interval_bounds();
    let mut shape = input.shape;
    for (idx, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Dense { weights, bias } => {
                let (map, out) =
                    dense_map(weights, bias, shape.len()).map_err(|e| layer_err(idx, e))?;
                (lo, hi) = map.interval_apply(&lo, &hi);
                shape = out;
            }
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (map, out) =
                    conv_map(kernel, bias, *stride, *pad, shape).map_err(|e| layer_err(idx, e))?;
                (lo, hi) = map.interval_apply(&lo, &hi);
                shape = out;
            }
            Layer::Relu => {
                lo.iter_mut().for_each(|v| *v = v.max(0.0));
                hi.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            Layer::Flatten => shape = Shape::Flat(shape.len()),
            Layer::Reshape { h, w, k } => {
                if h * w * k != shape.len() {
                    return Err(layer_err(
                        idx,
                        Error::ShapeMismatch(format!(
                            "reshape to {h}x{w}x{k} needs {} entries, have {}",
                            h * w * k,
                            shape.len()
                        )),
                    ));
                }
                shape = Shape::Spatial(*h, *w, *k);
            }
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| (l + u) / 2.0).collect();
    let mut generators = Vec::new();
    for (idx, (l, u)) in lo.iter().zip(&hi).enumerate() {
        let radius = (u - l) / 2.0;
        if radius > 0.0 {
            let mut g = vec![0.0; center.len()];
            g[idx] = radius;
            generators.push(g);
        }
    }
    Ok(TensorZonotope {
        shape,
        center,
        generators,
    })
}

/// Concrete forward pass of a single tensor (no set semantics).
pub fn forward(net: &Network, shape: Shape, x: &[f64]) -> Result<(Shape, Vec<f64>)> {
    let z = TensorZonotope::singleton(shape, x.to_vec())?;
    let out = propagate(net, &z)?;
    Ok((out.shape, out.center))
}

/// A raw input image: `H×W×C`, row-major `(row, col, channel)` data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    /// Height in pixels.
    pub h: usize,
    /// Width in pixels.
    pub w: usize,
    /// Channel count.
    pub c: usize,
    /// Flat pixel data of length `h·w·c`.
    pub data: Vec<f64>,
}

impl Image {
    /// Validate entry count and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.h * self.w * self.c {
            return Err(Error::ShapeMismatch(format!(
                "image data has {} entries, expected {}x{}x{} = {}",
                self.data.len(),
                self.h,
                self.w,
                self.c,
                self.h * self.w * self.c
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(())
    }

    /// Shape of this image.
    pub fn shape(&self) -> Shape {
        Shape::Spatial(self.h, self.w, self.c)
    }
}

/// Which set propagation to use when assembling instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReachMode {
    /// The zonotope transformer (affine layers exact, one fresh generator
    /// per crossing rectifier neuron).
    Zonotope,
    /// Interval-only fallback: cheaper and never tighter.
    Interval,
}

/// Knobs for [`instance_from_images`].
#[derive(Debug, Clone)]
pub struct AssemblyOptions {
    /// Strict-inequality slack for the assembled instance.
    pub epsilon: f64,
    /// Solver budgets for the assembled instance.
    pub limits: crate::problem::SolverLimits,
    /// Hull over-approximation over the input images.
    pub hull: HullMode,
    /// Set propagation through the backbone.
    pub reach: ReachMode,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            limits: crate::problem::SolverLimits::default(),
            hull: HullMode::BaseVertex,
            reach: ReachMode::Zonotope,
        }
    }
}

/// Build a certification instance from a seed image, perturbed images, and
/// an output deviation budget: take the hull zonotope of the images,
/// propagate it through the backbone, and pair the resulting heatmap set
/// with the ground truth and polytope.
pub fn instance_from_images(
    net: &Network,
    seed_image: &Image,
    perturbed: &[Image],
    ground_truth: Vec<i64>,
    polytope: crate::geometry::HPolytope,
    opts: &AssemblyOptions,
) -> Result<crate::problem::ProblemInstance> {
    seed_image.validate()?;
    for img in perturbed {
        img.validate()?;
        if img.shape() != seed_image.shape() {
            return Err(Error::ShapeMismatch(format!(
                "perturbed image is {}x{}x{}, seed is {}x{}x{}",
                img.h, img.w, img.c, seed_image.h, seed_image.w, seed_image.c
            )));
        }
    }
    let mut vertices = Vec::with_capacity(1 + perturbed.len());
    vertices.push(seed_image.data.clone());
    vertices.extend(perturbed.iter().map(|img| img.data.clone()));
    let input = TensorZonotope::from_hull(seed_image.shape(), &vertices, opts.hull)?;
    let reach = match opts.reach {
        ReachMode::Zonotope => propagate(net, &input)?,
        ReachMode::Interval => propagate_interval(net, &input)?,
    }
    .into_heatmap_zonotope()?;
    crate::problem::ProblemInstance::new(ground_truth, reach, polytope, opts.epsilon, opts.limits)
}
