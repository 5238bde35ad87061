//! 2-D convolution (cross-correlation) over NCHW tensors via im2col + GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, IxDyn};

use crate::{Backward, Tensor, Var};

/// Stride, zero padding and dilation per axis, as `(rows, cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }
}

impl Conv2dSpec {
    /// Stride-1 "same" padding for an odd kernel with the given dilation.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        assert!(kernel.0 % 2 == 1 && kernel.1 % 2 == 1, "same padding needs odd kernels");
        Self {
            stride: (1, 1),
            padding: (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2),
            dilation,
        }
    }

    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Option<(usize, usize)> {
        let dim = |n: usize, k: usize, s: usize, p: usize, d: usize| {
            let span = d * (k - 1) + 1;
            (n + 2 * p).checked_sub(span).map(|v| v / s + 1)
        };
        Some((
            dim(input.0, kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            dim(input.1, kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == (1, 1)
            && self.spec.padding == (0, 0)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let (dh, dw) = self.spec.dilation;
        let plane = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.c {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oi in 0..self.ho {
                        let ii = (oi * sh + ki * dh) as isize - ph as isize;
                        let drow = &mut dst[oi * self.wo..(oi + 1) * self.wo];
                        if ii < 0 || ii >= self.h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let src = &xc[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for (oj, d) in drow.iter_mut().enumerate() {
                            let jj = (oj * sw + kj * dw) as isize - pw as isize;
                            *d = if jj < 0 || jj >= self.w as isize { 0.0 } else { src[jj as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let (dh, dw) = self.spec.dilation;
        let plane = self.ho * self.wo;
        let mut row = 0;
        for c in 0..self.c {
            let xc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oi in 0..self.ho {
                        let ii = (oi * sh + ki * dh) as isize - ph as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let drow = &mut xc[ii as usize * self.w..(ii as usize + 1) * self.w];
                        for oj in 0..self.wo {
                            let jj = (oj * sw + kj * dw) as isize - pw as isize;
                            if jj >= 0 && jj < self.w as isize {
                                drow[jj as usize] += src[oi * self.wo + oj];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

struct Conv2dBackward {
    geo: Geometry,
    has_bias: bool,
}

impl Backward for Conv2dBackward {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = &self.geo;
        let x = inputs[0].as_standard_layout();
        let w = inputs[1].as_standard_layout();
        let grad = grad.as_standard_layout();
        let n = x.shape()[0];
        let o = w.shape()[0];
        let rows = g.c * g.kh * g.kw;
        let plane = g.ho * g.wo;
        let wmat = ArrayView2::from_shape((o, rows), w.as_slice().unwrap()).unwrap();
        let xs = x.as_slice().unwrap();
        let gs = grad.as_slice().unwrap();

        let mut dx = needs[0].then(|| vec![0.0; xs.len()]);
        let mut dw = needs[1].then(|| Array2::<f64>::zeros((o, rows)));
        let mut cols = vec![0.0; rows * plane];
        let mut dcols = Array2::<f64>::zeros((rows, plane));
        let in_len = g.c * g.h * g.w;
        for b in 0..n {
            let xb = &xs[b * in_len..(b + 1) * in_len];
            let gb = ArrayView2::from_shape((o, plane), &gs[b * o * plane..(b + 1) * o * plane]).unwrap();
            if let Some(dw) = dw.as_mut() {
                let colv = if g.is_pointwise() {
                    ArrayView2::from_shape((rows, plane), xb).unwrap()
                } else {
                    g.im2col(xb, &mut cols);
                    ArrayView2::from_shape((rows, plane), &cols[..]).unwrap()
                };
                general_mat_mul(1.0, &gb, &colv.t(), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                general_mat_mul(1.0, &wmat.t(), &gb, 0.0, &mut dcols);
                let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                if g.is_pointwise() {
                    for (d, s) in dxb.iter_mut().zip(dcols.iter()) {
                        *d += s;
                    }
                } else {
                    g.col2im(dcols.as_slice().unwrap(), dxb);
                }
            }
        }
        let mut out = vec![
            dx.map(|v| Tensor::from_shape_vec(IxDyn(x.shape()), v).unwrap()),
            dw.map(|m| m.into_shape_with_order(IxDyn(w.shape())).unwrap()),
        ];
        if self.has_bias {
            out.push(needs[2].then(|| {
                let mut gbias = Tensor::zeros(IxDyn(&[o]));
                for b in 0..n {
                    for oc in 0..o {
                        let start = (b * o + oc) * plane;
                        gbias[oc] += gs[start..start + plane].iter().sum::<f64>();
                    }
                }
                gbias
            }));
        }
        out
    }
}

/// Convolves `x: [N, C, H, W]` with `weight: [O, C, KH, KW]` plus an optional
/// `bias: [O]`. Out-of-bounds taps read zero.
pub fn conv2d(x: &Var, weight: &Var, bias: Option<&Var>, spec: Conv2dSpec) -> Var {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
    assert_eq!(ws.len(), 4, "conv2d weight must be OCHW, got {ws:?}");
    assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
    let (ho, wo) = spec
        .output_size((xs[2], xs[3]), (ws[2], ws[3]))
        .unwrap_or_else(|| panic!("conv2d input {xs:?} smaller than kernel {ws:?} under {spec:?}"));
    let geo = Geometry {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
        ho,
        wo,
        spec,
    };
    let (n, o) = (xs[0], ws[0]);
    let rows = geo.c * geo.kh * geo.kw;
    let plane = ho * wo;
    let xv = x.value().as_standard_layout();
    let wv = weight.value().as_standard_layout();
    let wmat = ArrayView2::from_shape((o, rows), wv.as_slice().unwrap()).unwrap();
    let xsl = xv.as_slice().unwrap();
    let in_len = geo.c * geo.h * geo.w;

    let mut out = vec![0.0; n * o * plane];
    let mut cols = vec![0.0; rows * plane];
    for b in 0..n {
        let xb = &xsl[b * in_len..(b + 1) * in_len];
        let colv = if geo.is_pointwise() {
            ArrayView2::from_shape((rows, plane), xb).unwrap()
        } else {
            geo.im2col(xb, &mut cols);
            ArrayView2::from_shape((rows, plane), &cols[..]).unwrap()
        };
        let mut ob = ndarray::ArrayViewMut2::from_shape((o, plane), &mut out[b * o * plane..(b + 1) * o * plane]).unwrap();
        general_mat_mul(1.0, &wmat, &colv, 0.0, &mut ob);
        if let Some(bias) = bias {
            for (oc, mut row) in ob.rows_mut().into_iter().enumerate() {
                let bv = bias.value()[oc];
                row.mapv_inplace(|v| v + bv);
            }
        }
    }
    let value = Tensor::from_shape_vec(IxDyn(&[n, o, ho, wo]), out).unwrap();
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[o], "conv2d bias must be [O]");
        parents.push(b.clone());
    }
    Var::from_op(
        value,
        parents,
        Conv2dBackward {
            geo,
            has_bias: bias.is_some(),
        },
    )
}
