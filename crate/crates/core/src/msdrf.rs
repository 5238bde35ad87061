//! Multi-scale dilated residual fusion (MS-DRF).
//!
//! ```text
//! F0     = Conv3x3(F_in)                         channel compression
//! F_i    = DilatedConv3x3_{rate_i}(F0)           parallel branches
//! F_fuse = Conv1x1(BN(Concat_i(Conv1x1_i(F_i)))) per-branch then global fusion
//! F_out  = F_fuse + Conv1x1(F_in)                projected skip
//! ```
//!
//! The block is affine end to end; callers apply their nonlinearity after it.

use msgnet_autograd::nn::{join, BatchNorm2d, Conv2d, Module};
use msgnet_autograd::{Param, Tensor, Var};
use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial extent of a `kernel`-tap axis with the given dilation.
pub fn receptive_field_of_branch(kernel: usize, dilation: usize) -> Result<usize> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::invalid(format!("kernel must be odd and >= 1, got {kernel}")));
    }
    if dilation == 0 {
        return Err(Error::invalid("dilation must be >= 1"));
    }
    Ok(dilation * (kernel - 1) + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdrfConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub compressed_channels: usize,
    /// Output width of each dilated branch, parallel to `dilation_rates`.
    pub branch_channels: Vec<usize>,
}

impl MsdrfConfig {
    /// Rates `[1, 3, 5]`, `C0 = C_in / 2` and branch widths `[2w, w, w]`
    /// with `w = C0 / 2` (each at least 1).
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self::with_rates(in_channels, out_channels, vec![1, 3, 5])
    }

    pub fn with_rates(in_channels: usize, out_channels: usize, dilation_rates: Vec<usize>) -> Self {
        let compressed = (in_channels / 2).max(1);
        let w = (compressed / 2).max(1);
        let branch_channels = dilation_rates
            .iter()
            .map(|&r| if r == 1 { 2 * w } else { w })
            .collect();
        Self {
            in_channels,
            out_channels,
            dilation_rates,
            compressed_channels: compressed,
            branch_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.compressed_channels == 0 {
            return Err(Error::config("msdrf.channels", "channel counts must be positive"));
        }
        if self.dilation_rates.is_empty() {
            return Err(Error::config("msdrf.dilation_rates", "at least one rate is required"));
        }
        if self.dilation_rates[0] == 0 || self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "msdrf.dilation_rates",
                format!("rates must be >= 1 and strictly increasing, got {:?}", self.dilation_rates),
            ));
        }
        if self.branch_channels.len() != self.dilation_rates.len() || self.branch_channels.contains(&0) {
            return Err(Error::config(
                "msdrf.branch_channels",
                "one positive width per dilation rate is required",
            ));
        }
        let others: Vec<usize> = self
            .dilation_rates
            .iter()
            .zip(&self.branch_channels)
            .filter(|(&r, _)| r != 1)
            .map(|(_, &c)| c)
            .collect();
        if others.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::config("msdrf.branch_channels", "dilated branches must share one width"));
        }
        if let (Some(pos), Some(&w)) = (self.dilation_rates.iter().position(|&r| r == 1), others.first()) {
            if self.branch_channels[pos] != 2 * w {
                return Err(Error::config(
                    "msdrf.branch_channels",
                    format!("rate-1 branch must be twice the width of the others ({} != 2 x {w})", self.branch_channels[pos]),
                ));
            }
        }
        Ok(())
    }

    pub fn concat_channels(&self) -> usize {
        self.branch_channels.iter().sum()
    }

    /// Largest spatial extent over the dilated branches.
    pub fn max_extent(&self) -> usize {
        self.dilation_rates
            .iter()
            .map(|&r| receptive_field_of_branch(3, r).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug)]
pub struct Msdrf {
    pub config: MsdrfConfig,
    pub compress: Conv2d,
    pub branches: Vec<Conv2d>,
    pub branch_fuse: Vec<Conv2d>,
    pub norm: BatchNorm2d,
    pub fuse: Conv2d,
    pub skip: Conv2d,
}

impl Msdrf {
    pub fn new<R: Rng + ?Sized>(config: MsdrfConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c0 = config.compressed_channels;
        let compress = Conv2d::same(config.in_channels, c0, (3, 3), (1, 1), true, rng);
        let branches = config
            .dilation_rates
            .iter()
            .zip(&config.branch_channels)
            .map(|(&r, &w)| Conv2d::same(c0, w, (3, 3), (r, r), true, rng))
            .collect();
        let branch_fuse = config
            .branch_channels
            .iter()
            .map(|&w| Conv2d::same(w, w, (1, 1), (1, 1), true, rng))
            .collect();
        let norm = BatchNorm2d::new(config.concat_channels());
        let fuse = Conv2d::same(config.concat_channels(), config.out_channels, (1, 1), (1, 1), true, rng);
        let skip = Conv2d::same(config.in_channels, config.out_channels, (1, 1), (1, 1), true, rng);
        if config.in_channels == config.out_channels {
            let mut eye = Tensor::zeros(IxDyn(&[config.out_channels, config.in_channels, 1, 1]));
            for c in 0..config.in_channels {
                eye[[c, c, 0, 0]] = 1.0;
            }
            skip.weight.set(eye);
        }
        Ok(Self {
            config,
            compress,
            branches,
            branch_fuse,
            norm,
            fuse,
            skip,
        })
    }

    /// Zeros every parameter on the fused path, leaving only the skip.
    pub fn zero_fused_path(&self) {
        self.compress.zero();
        for c in self.branches.iter().chain(&self.branch_fuse) {
            c.zero();
        }
        self.norm.zero_affine();
        self.fuse.zero();
    }

    fn check_channels(&self, input: &Var) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "MS-DRF expects [N, {}, H, W], got {s:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Forward pass; the input must cover the largest branch extent.
    pub fn forward(&self, input: &Var, train: bool) -> Result<Var> {
        self.check_channels(input)?;
        let s = input.shape();
        let extent = self.config.max_extent();
        if s[2] < extent || s[3] < extent {
            return Err(Error::shape(format!(
                "spatial size {}x{} smaller than the largest branch extent {extent}",
                s[2], s[3]
            )));
        }
        Ok(self.run(input, train))
    }

    /// Like [`forward`](Self::forward) for maps smaller than the largest
    /// branch extent; out-of-map taps read zero padding.
    pub fn forward_padded(&self, input: &Var, train: bool) -> Result<Var> {
        self.check_channels(input)?;
        Ok(self.run(input, train))
    }

    fn run(&self, input: &Var, train: bool) -> Var {
        let f0 = self.compress.forward(input);
        let fused: Vec<Var> = self
            .branches
            .iter()
            .zip(&self.branch_fuse)
            .map(|(dilated, pointwise)| pointwise.forward(&dilated.forward(&f0)))
            .collect();
        let normed = self.norm.forward(&Var::concat(&fused, 1), train);
        self.fuse.forward(&normed).add(&self.skip.forward(input))
    }
}

impl Module for Msdrf {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.compress.visit_params(&join(prefix, "compress"), f);
        for (i, (b, p)) in self.branches.iter().zip(&self.branch_fuse).enumerate() {
            b.visit_params(&join(prefix, &format!("branch{i}.dilated")), f);
            p.visit_params(&join(prefix, &format!("branch{i}.pointwise")), f);
        }
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
        self.skip.visit_params(&join(prefix, "skip"), f);
    }
}
