//! Parameter-limited dilated convolution (PLD-Conv).
//!
//! Two directional branches over the same input:
//!
//! * horizontal: a `1 × k_x` convolution with dilation `d` whose taps are
//!   displaced by learned offsets, saturated to `|Δx| ≤ r_x`, `|Δy| ≤ r_y`
//!   and Chebyshev radius `r` around the rigid tap position;
//! * vertical: a rigid `k_y × 1` convolution.
//!
//! Their outputs are concatenated along channels and mixed by a `1 × 1`
//! convolution. All branches are same-padded, so the block is a drop-in
//! replacement for a stride-1 `3 × 3` convolution.

use msgnet_autograd::nn::{join, uniform_tensor, Conv2d, Module};
use msgnet_autograd::{conv2d, Conv2dSpec, Param, Tensor, Var};
use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    bilinear_sample, build_sampling_grid, clamp_offsets, horizontal_kernel, KernelSpec, OffsetField,
    OffsetLimits, SamplingGrid,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PldConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel_x: usize,
    #[serde(default = "default_kernel")]
    pub kernel_y: usize,
    #[serde(default = "default_dilation")]
    pub dilation_x: usize,
    #[serde(default)]
    pub limits: OffsetLimits,
}

fn default_kernel() -> usize {
    3
}

fn default_dilation() -> usize {
    2
}

impl PldConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_x: 3,
            kernel_y: 3,
            dilation_x: 2,
            limits: OffsetLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("pld.channels", "channel counts must be positive"));
        }
        for (name, k) in [("pld.kernel_x", self.kernel_x), ("pld.kernel_y", self.kernel_y)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(name, format!("kernel size must be odd and >= 1, got {k}")));
            }
        }
        if self.dilation_x == 0 {
            return Err(Error::config("pld.dilation_x", "dilation must be >= 1"));
        }
        // Revalidate in case the struct was built field by field.
        OffsetLimits::new(self.limits.r_x(), self.limits.r_y(), self.limits.r())?;
        Ok(())
    }

    /// Number of horizontal sampling points `K`.
    pub fn kernel_points(&self) -> usize {
        self.kernel_x
    }

    pub fn kernel(&self) -> KernelSpec {
        horizontal_kernel(self.kernel_x, self.dilation_x)
    }

    /// Trainable scalars of a block with this configuration.
    pub fn param_count(&self) -> usize {
        let (c, o, k) = (self.in_channels, self.out_channels, self.kernel_points());
        let offsets = c * 9 * 2 * k + 2 * k;
        let horizontal = o * c * self.kernel_x + o;
        let vertical = o * c * self.kernel_y + o;
        let fuse = o * 2 * o + o;
        offsets + horizontal + vertical + fuse
    }
}

/// Learnable parameters of one PLD-Conv block.
#[derive(Debug)]
pub struct PldConv {
    pub config: PldConfig,
    /// `3 × 3` convolution emitting `2K` raw offsets per location, ordered
    /// `(Δx_0, Δy_0, Δx_1, Δy_1, …)`.
    pub offset_predictor: Conv2d,
    /// `[O, C, 1, k_x]`.
    pub weight_x: Param,
    pub bias_x: Param,
    pub conv_y: Conv2d,
    pub fuse: Conv2d,
}

impl PldConv {
    pub fn new<R: Rng + ?Sized>(config: PldConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, o, k) = (config.in_channels, config.out_channels, config.kernel_points());
        let offset_predictor = Conv2d::same(c, 2 * k, (3, 3), (1, 1), true, rng);
        // Start close to the rigid lattice.
        offset_predictor.rescale(0.1);
        let weight_x = Param::new(uniform_tensor(
            &[o, c, 1, config.kernel_x],
            (3.0 / (c * config.kernel_x) as f64).sqrt(),
            rng,
        ));
        let bias_x = Param::new(Tensor::zeros(IxDyn(&[o])));
        let conv_y = Conv2d::same(c, o, (config.kernel_y, 1), (1, 1), true, rng);
        let fuse = Conv2d::same(2 * o, o, (1, 1), (1, 1), true, rng);
        Ok(Self {
            config,
            offset_predictor,
            weight_x,
            bias_x,
            conv_y,
            fuse,
        })
    }

    /// Sets the offset predictor to zero, which pins every tap to the rigid
    /// dilated lattice.
    pub fn zero_offset_predictor(&self) {
        self.offset_predictor.zero();
    }

    fn check_input(&self, input: &Var) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "PLD-Conv expects [N, {}, H, W], got {s:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Raw `3 × 3` predictions reshaped to `[N, K, 2, H, W]` and saturated.
    pub fn predict_offsets(&self, input: &Var) -> Result<OffsetField> {
        self.check_input(input)?;
        let s = input.shape();
        let raw = self.offset_predictor.forward(input);
        let raw = raw.reshape(&[s[0], self.config.kernel_points(), 2, s[2], s[3]]);
        clamp_offsets(&raw, self.config.limits)
    }

    /// Output together with the realised sampling grid of the horizontal branch.
    ///
    /// The input must be at least as large as both kernel extents.
    pub fn forward_with_grid(&self, input: &Var) -> Result<(Var, SamplingGrid)> {
        self.check_input(input)?;
        let s = input.shape();
        let (kx, ky, d) = (self.config.kernel_x, self.config.kernel_y, self.config.dilation_x);
        let extent_x = d * (kx - 1) + 1;
        if s[3] < extent_x || s[2] < ky {
            return Err(Error::shape(format!(
                "spatial size {}x{} smaller than kernel extents (1x{extent_x}, {ky}x1)",
                s[2], s[3]
            )));
        }
        self.run(input)
    }

    pub fn forward(&self, input: &Var) -> Result<Var> {
        self.forward_with_grid(input).map(|(out, _)| out)
    }

    /// Like [`forward`](Self::forward) but accepts maps smaller than the
    /// kernel extents; taps past the border read zero padding. Used on the
    /// coarse levels of the detector backbone.
    pub fn forward_padded(&self, input: &Var) -> Result<Var> {
        self.check_input(input)?;
        self.run(input).map(|(out, _)| out)
    }

    fn run(&self, input: &Var) -> Result<(Var, SamplingGrid)> {
        let s = input.shape().to_vec();
        let kx = self.config.kernel_x;
        let offsets = self.predict_offsets(input)?;
        let grid = build_sampling_grid((s[2], s[3]), &self.config.kernel(), &offsets)?;
        let sampled = bilinear_sample(input, &grid)?;
        let (o, c) = (self.config.out_channels, self.config.in_channels);
        let wx = self.weight_x.var().reshape(&[o, c * kx, 1, 1]);
        let f_x = conv2d(&sampled, &wx, Some(&self.bias_x.var()), Conv2dSpec::default());
        let f_y = self.conv_y.forward(input);
        let out = self.fuse.forward(&Var::concat(&[f_x, f_y], 1));
        Ok((out, grid))
    }
}

impl Module for PldConv {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.offset_predictor.visit_params(&join(prefix, "offset_predictor"), f);
        f(&join(prefix, "weight_x"), &self.weight_x);
        f(&join(prefix, "bias_x"), &self.bias_x);
        self.conv_y.visit_params(&join(prefix, "conv_y"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use msgnet_autograd::nn::param_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(shape: &[usize], seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Var::constant(uniform_tensor(shape, 1.0, &mut rng))
    }

    #[test]
    fn output_shape_follows_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pld = PldConv::new(PldConfig::new(16, 32), &mut rng).unwrap();
        let out = pld.forward(&input(&[2, 16, 32, 64], 2)).unwrap();
        assert_eq!(out.shape(), &[2, 32, 32, 64]);
    }

    #[test]
    fn offset_field_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pld = PldConv::new(PldConfig::new(16, 8), &mut rng).unwrap();
        let field = pld.predict_offsets(&input(&[2, 16, 8, 8], 4)).unwrap();
        assert_eq!(field.values.shape(), &[2, 3, 2, 8, 8]);
    }

    #[test]
    fn zero_predictor_gives_zero_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pld = PldConv::new(PldConfig::new(4, 4), &mut rng).unwrap();
        pld.zero_offset_predictor();
        let field = pld.predict_offsets(&input(&[1, 4, 6, 6], 6)).unwrap();
        assert!(field.values.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_formula_matches_module() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (c, o) in [(3, 5), (16, 32), (8, 8)] {
            let cfg = PldConfig::new(c, o);
            let pld = PldConv::new(cfg.clone(), &mut rng).unwrap();
            assert_eq!(param_count(&pld), cfg.param_count());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = PldConfig::new(4, 4);
        cfg.kernel_x = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = PldConfig::new(4, 4);
        cfg.dilation_x = 0;
        assert!(cfg.validate().is_err());
        assert!(PldConfig::new(0, 4).validate().is_err());
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pld = PldConv::new(PldConfig::new(4, 4), &mut rng).unwrap();
        assert!(matches!(pld.forward(&input(&[1, 3, 8, 8], 9)), Err(Error::Shape(_))));
        assert!(matches!(pld.forward(&input(&[1, 4, 8, 4], 9)), Err(Error::Shape(_))));
        assert_eq!(pld.forward_padded(&input(&[1, 4, 2, 2], 9)).unwrap().shape(), &[1, 4, 2, 2]);
    }
}
