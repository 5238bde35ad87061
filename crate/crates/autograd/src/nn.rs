//! Parameterised layers built on the differentiable ops.

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::conv::{conv2d, Conv2dSpec};
use crate::{Param, Tensor, Var};

/// Anything that owns parameters. Names are dotted module paths.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// All parameters and buffers, in visiting order.
pub fn named_params(m: &dyn Module) -> Vec<(String, Param)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |name, p| out.push((name.to_string(), p.clone())));
    out
}

/// Trainable parameters only.
pub fn trainable_params(m: &dyn Module) -> Vec<Param> {
    named_params(m)
        .into_iter()
        .filter_map(|(_, p)| p.trainable().then_some(p))
        .collect()
}

/// Number of trainable scalars.
pub fn param_count(m: &dyn Module) -> usize {
    trainable_params(m).iter().map(Param::numel).sum()
}

pub fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    if bound == 0.0 {
        return Tensor::zeros(IxDyn(shape));
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).unwrap()
}

#[derive(Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    /// Weights drawn from `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, biases zero.
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel.0 * kernel.1) as f64;
        let weight = Param::new(uniform_tensor(
            &[out_ch, in_ch, kernel.0, kernel.1],
            (3.0 / fan_in).sqrt(),
            rng,
        ));
        let bias = bias.then(|| Param::new(Tensor::zeros(IxDyn(&[out_ch]))));
        Self { weight, bias, spec }
    }

    /// Stride-1 same-padded convolution.
    pub fn same<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        dilation: (usize, usize),
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Self::new(in_ch, out_ch, kernel, Conv2dSpec::same(kernel, dilation), bias, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Var) -> Var {
        let b = self.bias.as_ref().map(Param::var);
        conv2d(x, &self.weight.var(), b.as_ref(), self.spec)
    }

    /// Multiplies the current weights by `factor`.
    pub fn rescale(&self, factor: f64) {
        self.weight.update(|w| *w *= factor);
    }

    pub fn zero(&self) {
        self.weight.update(|w| w.fill(0.0));
        if let Some(b) = &self.bias {
            b.update(|v| v.fill(0.0));
        }
    }
}

impl Module for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Batch normalisation over the channel axis of NCHW tensors.
#[derive(Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let c = IxDyn(&[channels]);
        Self {
            gamma: Param::new(Tensor::ones(c.clone())),
            beta: Param::new(Tensor::zeros(c.clone())),
            running_mean: Param::buffer(Tensor::zeros(c.clone())),
            running_var: Param::buffer(Tensor::ones(c)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// In training mode normalises with batch statistics (biased variance)
    /// and updates the running estimates; otherwise uses the running estimates.
    pub fn forward(&self, x: &Var, train: bool) -> Var {
        let c = x.shape()[1];
        let bshape = [1, c, 1, 1];
        let gamma = self.gamma.var().reshape(&bshape);
        let beta = self.beta.var().reshape(&bshape);
        let xhat = if train {
            let mean = x.mean_axes(&[0, 2, 3], true);
            let centered = x.sub(&mean);
            let var = centered.square().mean_axes(&[0, 2, 3], true);
            let n = (x.shape()[0] * x.shape()[2] * x.shape()[3]) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let batch_mean = mean.value().clone().into_shape_with_order(IxDyn(&[c])).unwrap();
            let batch_var = var.value().clone().into_shape_with_order(IxDyn(&[c])).unwrap();
            self.running_mean.update(|r| *r = &*r * (1.0 - m) + &batch_mean * m);
            self.running_var.update(|r| *r = &*r * (1.0 - m) + &batch_var * (m * unbias));
            centered.div(&var.add_scalar(self.eps).sqrt())
        } else {
            let mean = Var::constant(self.running_mean.value().into_shape_with_order(IxDyn(&bshape)).unwrap());
            let std = self
                .running_var
                .value()
                .mapv(|v| (v + self.eps).sqrt())
                .into_shape_with_order(IxDyn(&bshape))
                .unwrap();
            x.sub(&mean).div(&Var::constant(std))
        };
        xhat.mul(&gamma).add(&beta)
    }

    pub fn zero_affine(&self) {
        self.gamma.update(|g| g.fill(0.0));
        self.beta.update(|b| b.fill(0.0));
    }
}

impl Module for BatchNorm2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }
}

/// `y = x Wᵀ + b` on `[N, in]` inputs.
#[derive(Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = (3.0 / in_features as f64).sqrt();
        Self {
            weight: Param::new(uniform_tensor(&[out_features, in_features], bound, rng)),
            bias: Param::new(Tensor::zeros(IxDyn(&[out_features]))),
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(IxDyn(&[out_features, in_features]))),
            bias: Param::new(Tensor::zeros(IxDyn(&[out_features]))),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.matmul(&self.weight.var().transpose2()).add(&self.bias.var())
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
}
