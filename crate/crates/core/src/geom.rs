//! Sampling geometry for constrained deformable convolution.
//!
//! Coordinates are continuous `(x = column, y = row)` with the origin at the
//! centre of the top-left pixel, so integer coordinates address stored pixels
//! exactly. Offset and grid tensors use the layout `[N, K, 2, H, W]`, where
//! `K` indexes kernel points and the axis of length 2 holds `(Δx, Δy)` or
//! `(x, y)`.

use msgnet_autograd::{Backward, Tensor, Var};
use ndarray::{Array5, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self { x, y })
    }
}

/// `max(|x_p − x_q|, |y_p − y_q|)`.
pub fn chebyshev_distance(p: Point2D, q: Point2D) -> Result<f64> {
    if !(p.x.is_finite() && p.y.is_finite() && q.x.is_finite() && q.y.is_finite()) {
        return Err(Error::NonFinite("chebyshev_distance input"));
    }
    Ok((p.x - q.x).abs().max((p.y - q.y).abs()))
}

/// Per-axis displacement bounds and the Chebyshev radius, in pixels.
///
/// `r >= max(r_x, r_y)` is enforced, so satisfying the per-axis bounds
/// implies the Chebyshev bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLimits", into = "RawLimits")]
pub struct OffsetLimits {
    r_x: f64,
    r_y: f64,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLimits {
    r_x: f64,
    r_y: f64,
    r: f64,
}

impl TryFrom<RawLimits> for OffsetLimits {
    type Error = Error;

    fn try_from(v: RawLimits) -> Result<Self> {
        OffsetLimits::new(v.r_x, v.r_y, v.r)
    }
}

impl From<OffsetLimits> for RawLimits {
    fn from(v: OffsetLimits) -> Self {
        RawLimits {
            r_x: v.r_x,
            r_y: v.r_y,
            r: v.r,
        }
    }
}

impl Default for OffsetLimits {
    fn default() -> Self {
        Self {
            r_x: 4.0,
            r_y: 1.0,
            r: 4.0,
        }
    }
}

impl OffsetLimits {
    pub fn new(r_x: f64, r_y: f64, r: f64) -> Result<Self> {
        for (name, v) in [("r_x", r_x), ("r_y", r_y), ("r", r)] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
            if v < 0.0 {
                return Err(Error::config(name, format!("must be non-negative, got {v}")));
            }
        }
        if r < r_x.max(r_y) {
            return Err(Error::config(
                "r",
                format!("Chebyshev radius {r} is smaller than max(r_x, r_y) = {}", r_x.max(r_y)),
            ));
        }
        Ok(Self { r_x, r_y, r })
    }

    /// Limits with `r = max(r_x, r_y)`.
    pub fn per_axis(r_x: f64, r_y: f64) -> Result<Self> {
        Self::new(r_x, r_y, r_x.max(r_y))
    }

    pub fn r_x(&self) -> f64 {
        self.r_x
    }

    pub fn r_y(&self) -> f64 {
        self.r_y
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

/// Clamped sampling offsets, `[N, K, 2, H, W]`.
#[derive(Clone, Debug)]
pub struct OffsetField {
    pub values: Var,
    pub limits: OffsetLimits,
}

impl OffsetField {
    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn kernel_points(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[3], self.values.shape()[4])
    }
}

fn saturate(raw: &Var, limit: f64, axis_name: &str) -> Result<Var> {
    if limit > 0.0 {
        return Ok(raw.scale(1.0 / limit).tanh().scale(limit));
    }
    if raw.value().iter().any(|&v| v != 0.0) {
        return Err(Error::DegenerateLimit(format!(
            "limit for {axis_name} is zero but raw offsets are nonzero"
        )));
    }
    Ok(raw.scale(0.0))
}

/// Smoothly saturates raw offsets: `Δ = limit · tanh(raw / limit)` per axis.
///
/// `raw` has layout `[N, K, 2, H, W]`. Outputs lie strictly inside the
/// per-axis bounds and keep the sign of the input.
pub fn clamp_offsets(raw: &Var, limits: OffsetLimits) -> Result<OffsetField> {
    let s = raw.shape();
    if s.len() != 5 || s[2] != 2 {
        return Err(Error::shape(format!("raw offsets must be [N, K, 2, H, W], got {s:?}")));
    }
    if raw.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw offsets"));
    }
    let dx = saturate(&raw.narrow(2, 0, 1), limits.r_x, "x")?;
    let dy = saturate(&raw.narrow(2, 1, 1), limits.r_y, "y")?;
    Ok(OffsetField {
        values: Var::concat(&[dx, dy], 2),
        limits,
    })
}

/// Worst-case offsets of a field and the number of entries breaking a bound.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstraintReport {
    pub entries: usize,
    pub max_abs_dx: f64,
    pub max_abs_dy: f64,
    pub max_chebyshev: f64,
    pub violations: usize,
}

/// Sweeps every `(Δx, Δy)` pair of `[N, K, 2, H, W]` offsets against the limits.
pub fn verify_offsets(offsets: &Tensor, limits: &OffsetLimits) -> ConstraintReport {
    let s = offsets.shape();
    let mut rep = ConstraintReport::default();
    for n in 0..s[0] {
        for k in 0..s[1] {
            for i in 0..s[3] {
                for j in 0..s[4] {
                    let dx = offsets[[n, k, 0, i, j]];
                    let dy = offsets[[n, k, 1, i, j]];
                    let cheb = dx.abs().max(dy.abs());
                    rep.entries += 1;
                    rep.max_abs_dx = rep.max_abs_dx.max(dx.abs());
                    rep.max_abs_dy = rep.max_abs_dy.max(dy.abs());
                    rep.max_chebyshev = rep.max_chebyshev.max(cheb);
                    let ok = dx.is_finite()
                        && dy.is_finite()
                        && dx.abs() <= limits.r_x
                        && dy.abs() <= limits.r_y
                        && cheb <= limits.r;
                    if !ok {
                        rep.violations += 1;
                    }
                }
            }
        }
    }
    rep
}

/// Base displacement `(dx, dy)` of each kernel point relative to the output
/// location.
pub type KernelSpec = Vec<(f64, f64)>;

/// Taps of a `1 × k` kernel with horizontal dilation `d`, centred on zero.
pub fn horizontal_kernel(k: usize, dilation: usize) -> KernelSpec {
    let half = (k as isize - 1) / 2;
    (0..k as isize)
        .map(|t| (((t - half) * dilation as isize) as f64, 0.0))
        .collect()
}

/// Absolute sampling coordinates, `[N, K, 2, H, W]`.
#[derive(Clone, Debug)]
pub struct SamplingGrid {
    pub coords: Var,
}

fn rigid_lattice(shape: (usize, usize), kernel: &[(f64, f64)]) -> Tensor {
    let (h, w) = shape;
    let mut base = Array5::<f64>::zeros((1, kernel.len(), 2, h, w));
    for (k, &(bx, by)) in kernel.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                base[[0, k, 0, i, j]] = j as f64 + bx;
                base[[0, k, 1, i, j]] = i as f64 + by;
            }
        }
    }
    base.into_dyn()
}

/// `coords[b, k, :, i, j] = (j + bx_k + Δx, i + by_k + Δy)`.
pub fn build_sampling_grid(
    shape: (usize, usize),
    kernel: &[(f64, f64)],
    offsets: &OffsetField,
) -> Result<SamplingGrid> {
    let s = offsets.values.shape();
    if s.len() != 5 || s[1] != kernel.len() || s[2] != 2 || (s[3], s[4]) != shape {
        return Err(Error::shape(format!(
            "offsets {s:?} do not match {} kernel points over {shape:?}",
            kernel.len()
        )));
    }
    let base = Var::constant(rigid_lattice(shape, kernel));
    Ok(SamplingGrid {
        coords: offsets.values.add(&base),
    })
}

impl SamplingGrid {
    /// Largest Chebyshev distance between a realised sampling point and its
    /// rigid lattice position.
    pub fn max_chebyshev_deviation(&self, kernel: &[(f64, f64)]) -> f64 {
        let c = self.coords.value();
        let s = c.shape();
        let base = rigid_lattice((s[3], s[4]), kernel);
        let mut worst = 0.0f64;
        for n in 0..s[0] {
            for k in 0..s[1] {
                for i in 0..s[3] {
                    for j in 0..s[4] {
                        let dx = c[[n, k, 0, i, j]] - base[[0, k, 0, i, j]];
                        let dy = c[[n, k, 1, i, j]] - base[[0, k, 1, i, j]];
                        worst = worst.max(dx.abs().max(dy.abs()));
                    }
                }
            }
        }
        worst
    }
}

struct Corner {
    y: isize,
    x: isize,
}

/// Bilinear weights and the four neighbouring integer positions of `(x, y)`.
#[inline]
fn neighbours(x: f64, y: f64) -> ([Corner; 4], f64, f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    (
        [
            Corner { y: y0, x: x0 },
            Corner { y: y0, x: x0 + 1 },
            Corner { y: y0 + 1, x: x0 },
            Corner { y: y0 + 1, x: x0 + 1 },
        ],
        fx,
        fy,
    )
}

struct BilinearSample {
    kernel_points: usize,
}

impl Backward for BilinearSample {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (map, grid) = (inputs[0], inputs[1]);
        let (n, c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2], map.shape()[3]);
        let kp = self.kernel_points;
        let (ho, wo) = (grid.shape()[3], grid.shape()[4]);
        let mut gmap = needs[0].then(|| Tensor::zeros(map.raw_dim()));
        let mut ggrid = needs[1].then(|| Tensor::zeros(grid.raw_dim()));
        let at = |b: usize, ch: usize, cr: &Corner| -> f64 {
            if cr.y >= 0 && cr.x >= 0 && (cr.y as usize) < h && (cr.x as usize) < w {
                map[[b, ch, cr.y as usize, cr.x as usize]]
            } else {
                0.0
            }
        };
        for b in 0..n {
            for k in 0..kp {
                for i in 0..ho {
                    for j in 0..wo {
                        let x = grid[[b, k, 0, i, j]];
                        let y = grid[[b, k, 1, i, j]];
                        let (corners, fx, fy) = neighbours(x, y);
                        let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                        let (mut dgx, mut dgy) = (0.0, 0.0);
                        for ch in 0..c {
                            let g = grad[[b, ch * kp + k, i, j]];
                            if g == 0.0 {
                                continue;
                            }
                            if let Some(gm) = gmap.as_mut() {
                                for (cr, wt) in corners.iter().zip(weights) {
                                    if cr.y >= 0 && cr.x >= 0 && (cr.y as usize) < h && (cr.x as usize) < w {
                                        gm[[b, ch, cr.y as usize, cr.x as usize]] += wt * g;
                                    }
                                }
                            }
                            if ggrid.is_some() {
                                let v = [
                                    at(b, ch, &corners[0]),
                                    at(b, ch, &corners[1]),
                                    at(b, ch, &corners[2]),
                                    at(b, ch, &corners[3]),
                                ];
                                dgx += g * ((1.0 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]));
                                dgy += g * ((1.0 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]));
                            }
                        }
                        if let Some(gg) = ggrid.as_mut() {
                            gg[[b, k, 0, i, j]] = dgx;
                            gg[[b, k, 1, i, j]] = dgy;
                        }
                    }
                }
            }
        }
        vec![gmap, ggrid]
    }
}

/// Samples `map: [N, C, H, W]` at every grid point with bilinear
/// interpolation and zero padding outside the map.
///
/// Returns `[N, C·K, Ho, Wo]` with channel index `c·K + k`, matching the
/// flattened layout of a `[O, C, 1, K]` convolution weight. Differentiable
/// with respect to both the map and the grid coordinates.
pub fn bilinear_sample(map: &Var, grid: &SamplingGrid) -> Result<Var> {
    let ms = map.shape();
    let gs = grid.coords.shape();
    if ms.len() != 4 {
        return Err(Error::shape(format!("feature map must be [N, C, H, W], got {ms:?}")));
    }
    if gs.len() != 5 || gs[2] != 2 || gs[0] != ms[0] {
        return Err(Error::shape(format!("grid {gs:?} incompatible with map {ms:?}")));
    }
    if grid.coords.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampling grid"));
    }
    if map.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature map"));
    }
    let (n, c, h, w) = (ms[0], ms[1], ms[2], ms[3]);
    let (kp, ho, wo) = (gs[1], gs[3], gs[4]);
    let m = map.value();
    let g = grid.coords.value();
    let mut out = Tensor::zeros(IxDyn(&[n, c * kp, ho, wo]));
    for b in 0..n {
        for k in 0..kp {
            for i in 0..ho {
                for j in 0..wo {
                    let (corners, fx, fy) = neighbours(g[[b, k, 0, i, j]], g[[b, k, 1, i, j]]);
                    let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                    for (cr, wt) in corners.iter().zip(weights) {
                        if wt == 0.0 || cr.y < 0 || cr.x < 0 || cr.y as usize >= h || cr.x as usize >= w {
                            continue;
                        }
                        let (yy, xx) = (cr.y as usize, cr.x as usize);
                        for ch in 0..c {
                            out[[b, ch * kp + k, i, j]] += wt * m[[b, ch, yy, xx]];
                        }
                    }
                }
            }
        }
    }
    Ok(Var::from_op(
        out,
        vec![map.clone(), grid.coords.clone()],
        BilinearSample { kernel_points: kp },
    ))
}
