//! Differentiable tensor operations.
//!
//! Binary elementwise operations follow numpy broadcasting; gradients are
//! summed back to each operand's shape.

use ndarray::{Axis, IxDyn, Slice, Zip};

use crate::{Backward, Tensor, Var};

/// Sums `grad` down to `shape`, undoing numpy-style broadcasting.
pub fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    t.broadcast(IxDyn(shape))
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", t.shape(), shape))
        .to_owned()
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

struct Binary(BinKind);

impl Backward for Binary {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let out_shape = grad.shape();
        let (ga, gb): (Option<Tensor>, Option<Tensor>) = match self.0 {
            BinKind::Add => (Some(grad.clone()), Some(grad.clone())),
            BinKind::Sub => (Some(grad.clone()), Some(-grad)),
            BinKind::Mul => (
                needs[0].then(|| grad * &broadcast_to(b, out_shape)),
                needs[1].then(|| grad * &broadcast_to(a, out_shape)),
            ),
            BinKind::Div => {
                let bb = broadcast_to(b, out_shape);
                let ga = needs[0].then(|| grad / &bb);
                let gb = needs[1].then(|| {
                    let aa = broadcast_to(a, out_shape);
                    let mut g = grad.clone();
                    Zip::from(&mut g).and(&aa).and(&bb).for_each(|g, &a, &b| *g *= -a / (b * b));
                    g
                });
                (ga, gb)
            }
            BinKind::Min | BinKind::Max => {
                let aa = broadcast_to(a, out_shape);
                let bb = broadcast_to(b, out_shape);
                let take_a = |x: f64, y: f64| match self.0 {
                    BinKind::Min => x <= y,
                    _ => x >= y,
                };
                let mut ga = grad.clone();
                let mut gb = grad.clone();
                Zip::from(&mut ga).and(&mut gb).and(&aa).and(&bb).for_each(|ga, gb, &x, &y| {
                    if take_a(x, y) {
                        *gb = 0.0;
                    } else {
                        *ga = 0.0;
                    }
                });
                (Some(ga), Some(gb))
            }
        };
        vec![
            ga.filter(|_| needs[0]).map(|g| reduce_to_shape(&g, a.shape())),
            gb.filter(|_| needs[1]).map(|g| reduce_to_shape(&g, b.shape())),
        ]
    }
}

fn binary(a: &Var, b: &Var, kind: BinKind) -> Var {
    let (x, y) = (a.value(), b.value());
    let value = match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
        BinKind::Div => x / y,
        BinKind::Min | BinKind::Max => {
            let shape = co_broadcast(x.shape(), y.shape());
            let mut out = broadcast_to(x, &shape);
            let yy = broadcast_to(y, &shape);
            Zip::from(&mut out).and(&yy).for_each(|o, &v| {
                *o = match kind {
                    BinKind::Min => o.min(v),
                    _ => o.max(v),
                }
            });
            out
        }
    };
    Var::from_op(value, vec![a.clone(), b.clone()], Binary(kind))
}

fn co_broadcast(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

struct Unary {
    /// Derivative given input and output.
    df: fn(f64, f64) -> f64,
}

impl Backward for Unary {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], out: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        Zip::from(&mut g)
            .and(inputs[0])
            .and(out)
            .for_each(|g, &x, &y| *g *= (self.df)(x, y));
        vec![Some(g)]
    }
}

fn unary(a: &Var, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
    let value = a.value().mapv(f);
    Var::from_op(value, vec![a.clone()], Unary { df })
}

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Scale(f64);

impl Backward for Scale {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad * self.0)]
    }
}

struct Identity;

impl Backward for Identity {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone())]
    }
}

struct Clamp {
    lo: f64,
    hi: f64,
}

impl Backward for Clamp {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        Zip::from(&mut g).and(inputs[0]).for_each(|g, &x| {
            if x < self.lo || x > self.hi {
                *g = 0.0;
            }
        });
        vec![Some(g)]
    }
}

struct SumAxes {
    axes: Vec<usize>,
    keepdim: bool,
    scale: f64,
}

impl Backward for SumAxes {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        if !self.keepdim {
            for &ax in &self.axes {
                g = g.insert_axis(Axis(ax));
            }
        }
        let mut g = broadcast_to(&g, inputs[0].shape());
        if self.scale != 1.0 {
            g *= self.scale;
        }
        vec![Some(g)]
    }
}

struct Reshape;

impl Backward for Reshape {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(reshape_tensor(grad, inputs[0].shape()))]
    }
}

pub(crate) fn reshape_tensor(t: &Tensor, shape: &[usize]) -> Tensor {
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .unwrap_or_else(|e| panic!("reshape {:?} -> {:?}: {e}", t.shape(), shape))
}

struct Permute(Vec<usize>);

impl Backward for Permute {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        vec![Some(grad.clone().permuted_axes(IxDyn(&inv)).as_standard_layout().into_owned())]
    }
}

struct Concat {
    axis: usize,
}

impl Backward for Concat {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut start = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let len = x.shape()[self.axis];
                let g = need.then(|| {
                    grad.slice_axis(Axis(self.axis), Slice::from(start..start + len))
                        .to_owned()
                });
                start += len;
                g
            })
            .collect()
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl Backward for Narrow {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = Tensor::zeros(inputs[0].raw_dim());
        let len = grad.shape()[self.axis];
        g.slice_axis_mut(Axis(self.axis), Slice::from(self.start..self.start + len))
            .assign(grad);
        vec![Some(g)]
    }
}

struct MatMul;

impl Backward for MatMul {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let g = grad.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let a = inputs[0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = inputs[1].view().into_dimensionality::<ndarray::Ix2>().unwrap();
        vec![
            needs[0].then(|| g.dot(&b.t()).into_dyn()),
            needs[1].then(|| a.t().dot(&g).into_dyn()),
        ]
    }
}

struct SelectRows(Vec<usize>);

impl Backward for SelectRows {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = Tensor::zeros(inputs[0].raw_dim());
        for (row, &src) in self.0.iter().enumerate() {
            let mut dst = g.index_axis_mut(Axis(0), src);
            dst += &grad.index_axis(Axis(0), row);
        }
        vec![Some(g)]
    }
}

struct LogSoftmax {
    axis: usize,
}

impl Backward for LogSoftmax {
    fn backward(&self, grad: &Tensor, _: &[&Tensor], out: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let gsum = grad.sum_axis(Axis(self.axis)).insert_axis(Axis(self.axis));
        let softmax = out.mapv(f64::exp);
        vec![Some(grad - &(&softmax * &gsum))]
    }
}

struct BceWithLogits {
    target: Tensor,
}

impl Backward for BceWithLogits {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        Zip::from(&mut g)
            .and(inputs[0])
            .and(&self.target)
            .for_each(|g, &x, &t| *g *= sigmoid_f(x) - t);
        vec![Some(g)]
    }
}

struct UpsampleNearest(usize);

impl Backward for UpsampleNearest {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let s = inputs[0].shape();
        let f = self.0;
        let mut g = Tensor::zeros(inputs[0].raw_dim());
        for n in 0..s[0] {
            for c in 0..s[1] {
                for i in 0..s[2] * f {
                    for j in 0..s[3] * f {
                        g[[n, c, i / f, j / f]] += grad[[n, c, i, j]];
                    }
                }
            }
        }
        vec![Some(g)]
    }
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Add)
    }

    pub fn sub(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Sub)
    }

    pub fn mul(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Mul)
    }

    pub fn div(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Div)
    }

    /// Elementwise minimum; ties send the gradient to `self`.
    pub fn minimum(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Min)
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Var) -> Var {
        binary(self, other, BinKind::Max)
    }

    pub fn scale(&self, s: f64) -> Var {
        Var::from_op(self.value() * s, vec![self.clone()], Scale(s))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        Var::from_op(self.value() + s, vec![self.clone()], Identity)
    }

    pub fn exp(&self) -> Var {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        unary(self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Var {
        unary(self, f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn tanh(&self) -> Var {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var {
        unary(self, sigmoid_f, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Var {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn silu(&self) -> Var {
        unary(
            self,
            |x| x * sigmoid_f(x),
            |x, _| {
                let s = sigmoid_f(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&self) -> Var {
        unary(
            self,
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid_f(x),
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let value = self.value().mapv(|x| x.clamp(lo, hi));
        Var::from_op(value, vec![self.clone()], Clamp { lo, hi })
    }

    fn reduce(&self, axes: &[usize], keepdim: bool, mean: bool) -> Var {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut v = self.value().clone();
        let mut count = 1usize;
        for &ax in sorted.iter().rev() {
            count *= v.shape()[ax];
            v = v.sum_axis(Axis(ax));
            if keepdim {
                v = v.insert_axis(Axis(ax));
            }
        }
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        if mean {
            v *= scale;
        }
        Var::from_op(
            v,
            vec![self.clone()],
            SumAxes {
                axes: sorted,
                keepdim,
                scale,
            },
        )
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Var {
        self.reduce(axes, keepdim, false)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Var {
        self.reduce(axes, keepdim, true)
    }

    pub fn sum(&self) -> Var {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(&axes, false, false)
    }

    pub fn mean(&self) -> Var {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(&axes, false, true)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        Var::from_op(reshape_tensor(self.value(), shape), vec![self.clone()], Reshape)
    }

    pub fn permute(&self, axes: &[usize]) -> Var {
        let value = self
            .value()
            .clone()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        Var::from_op(value, vec![self.clone()], Permute(axes.to_vec()))
    }

    pub fn concat(vars: &[Var], axis: usize) -> Var {
        assert!(!vars.is_empty(), "concat of nothing");
        let views: Vec<_> = vars.iter().map(|v| v.value().view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views)
            .unwrap_or_else(|e| panic!("concat along {axis}: {e}"));
        Var::from_op(value, vars.to_vec(), Concat { axis })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        Var::from_op(value, vec![self.clone()], Narrow { axis, start })
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Var) -> Var {
        let a = self.value().view().into_dimensionality::<ndarray::Ix2>().expect("matmul lhs must be 2-D");
        let b = other.value().view().into_dimensionality::<ndarray::Ix2>().expect("matmul rhs must be 2-D");
        Var::from_op(a.dot(&b).into_dyn(), vec![self.clone(), other.clone()], MatMul)
    }

    pub fn transpose2(&self) -> Var {
        self.permute(&[1, 0])
    }

    /// Gathers rows (indices along axis 0); repeated indices accumulate gradient.
    pub fn select_rows(&self, rows: &[usize]) -> Var {
        let value = self.value().select(Axis(0), rows);
        Var::from_op(value, vec![self.clone()], SelectRows(rows.to_vec()))
    }

    pub fn log_softmax(&self, axis: usize) -> Var {
        let x = self.value();
        let max = x.fold_axis(Axis(axis), f64::NEG_INFINITY, |&m, &v| m.max(v)).insert_axis(Axis(axis));
        let shifted = x - &max;
        let lse = shifted.mapv(f64::exp).sum_axis(Axis(axis)).mapv(f64::ln).insert_axis(Axis(axis));
        Var::from_op(&shifted - &lse, vec![self.clone()], LogSoftmax { axis })
    }

    /// Elementwise binary cross-entropy against constant targets in `[0, 1]`.
    pub fn bce_with_logits(&self, target: &Tensor) -> Var {
        assert_eq!(self.shape(), target.shape(), "bce target shape");
        let mut value = self.value().clone();
        Zip::from(&mut value)
            .and(target)
            .for_each(|x, &t| *x = x.max(0.0) - *x * t + (-x.abs()).exp().ln_1p());
        Var::from_op(
            value,
            vec![self.clone()],
            BceWithLogits {
                target: target.clone(),
            },
        )
    }

    /// Nearest-neighbour upsampling of an NCHW tensor by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Var {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "upsample expects NCHW");
        let x = self.value();
        let mut out = Tensor::zeros(IxDyn(&[s[0], s[1], s[2] * factor, s[3] * factor]));
        for n in 0..s[0] {
            for c in 0..s[1] {
                for i in 0..s[2] * factor {
                    for j in 0..s[3] * factor {
                        out[[n, c, i, j]] = x[[n, c, i / factor, j / factor]];
                    }
                }
            }
        }
        Var::from_op(out, vec![self.clone()], UpsampleNearest(factor))
    }
}

/// Mean cross-entropy of `[N, K]` logits against class indices.
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Var {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2);
    assert_eq!(shape[0], labels.len());
    let mut onehot = Tensor::zeros(IxDyn(shape));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l]] = -1.0 / labels.len() as f64;
    }
    logits.log_softmax(1).mul(&Var::constant(onehot)).sum()
}
