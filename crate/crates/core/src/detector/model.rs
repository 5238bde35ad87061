//! Backbone, neck and head of the detector.
//!
//! * Backbone: stride-2 stem, then one stage per width, each a stride-2
//!   downsampling conv, a `3 × 3` conv and a stage-final `3 × 3` conv
//!   (PLD-Conv or plain) with a residual connection.
//! * Neck: top-down then bottom-up path aggregation; every fusion node is an
//!   MS-DRF block followed by SiLU, or a plain `1 × 1` + `3 × 3` pair.
//! * Head: one decoupled classification / box branch pair per level. Boxes
//!   are `(left, top, right, bottom)` distances from the cell centre,
//!   `softplus(raw) · stride`.

use msgnet_autograd::nn::{join, BatchNorm2d, Conv2d, Module};
use msgnet_autograd::{no_grad, Conv2dSpec, Param, Tensor, Var};
use rand::Rng;

use super::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::msdrf::{Msdrf, MsdrfConfig};
use crate::pld::PldConv;
use crate::sgie::Sgie;

/// Initial classification bias, `-ln((1 - p) / p)` for prior `p = 0.01`.
const CLS_PRIOR_BIAS: f64 = -4.59511985013459;

#[derive(Debug)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnAct {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let spec = Conv2dSpec {
            stride: (stride, stride),
            padding: (kernel / 2, kernel / 2),
            dilation: (1, 1),
        };
        Self {
            conv: Conv2d::new(in_ch, out_ch, (kernel, kernel), spec, false, rng),
            bn: BatchNorm2d::new(out_ch),
        }
    }

    pub fn forward(&self, x: &Var, train: bool) -> Var {
        self.bn.forward(&self.conv.forward(x), train).silu()
    }
}

impl Module for ConvBnAct {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }
}

#[derive(Debug)]
pub enum StageFinal {
    Pld(PldConv),
    Plain(Conv2d),
}

#[derive(Debug)]
pub struct Stage {
    pub down: ConvBnAct,
    pub block: ConvBnAct,
    pub last: StageFinal,
    pub last_bn: BatchNorm2d,
}

impl Stage {
    fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        let d = self.down.forward(x, train);
        let y = self.block.forward(&d, train);
        let y = match &self.last {
            StageFinal::Pld(p) => p.forward_padded(&y)?,
            StageFinal::Plain(c) => c.forward(&y),
        };
        Ok(d.add(&self.last_bn.forward(&y, train).silu()))
    }
}

impl Module for Stage {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.down.visit_params(&join(prefix, "down"), f);
        self.block.visit_params(&join(prefix, "block"), f);
        match &self.last {
            StageFinal::Pld(p) => p.visit_params(&join(prefix, "pld"), f),
            StageFinal::Plain(c) => c.visit_params(&join(prefix, "conv"), f),
        }
        self.last_bn.visit_params(&join(prefix, "last_bn"), f);
    }
}

#[derive(Debug)]
pub enum FusionNode {
    Msdrf(Msdrf),
    Plain(ConvBnAct, ConvBnAct),
}

impl FusionNode {
    fn new<R: Rng + ?Sized>(config: &DetectorConfig, in_ch: usize, out_ch: usize, rng: &mut R) -> Result<Self> {
        Ok(if config.use_msdrf {
            FusionNode::Msdrf(Msdrf::new(
                MsdrfConfig::with_rates(in_ch, out_ch, config.msdrf_rates.clone()),
                rng,
            )?)
        } else {
            FusionNode::Plain(ConvBnAct::new(in_ch, out_ch, 1, 1, rng), ConvBnAct::new(out_ch, out_ch, 3, 1, rng))
        })
    }

    fn forward(&self, x: &Var, train: bool) -> Result<Var> {
        Ok(match self {
            FusionNode::Msdrf(m) => m.forward_padded(x, train)?.silu(),
            FusionNode::Plain(a, b) => b.forward(&a.forward(x, train), train),
        })
    }
}

impl Module for FusionNode {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            FusionNode::Msdrf(m) => m.visit_params(&join(prefix, "msdrf"), f),
            FusionNode::Plain(a, b) => {
                a.visit_params(&join(prefix, "reduce"), f);
                b.visit_params(&join(prefix, "conv"), f);
            }
        }
    }
}

#[derive(Debug)]
pub struct HeadLevel {
    pub cls_stem: ConvBnAct,
    pub cls_out: Conv2d,
    pub reg_stem: ConvBnAct,
    pub reg_out: Conv2d,
}

impl Module for HeadLevel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.cls_stem.visit_params(&join(prefix, "cls_stem"), f);
        self.cls_out.visit_params(&join(prefix, "cls_out"), f);
        self.reg_stem.visit_params(&join(prefix, "reg_stem"), f);
        self.reg_out.visit_params(&join(prefix, "reg_out"), f);
    }
}

/// Raw head outputs, all levels concatenated in level-major, row-major
/// location order.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `[N, M, num_classes]` logits.
    pub cls: Var,
    /// `[N, M, 4]` non-negative `(l, t, r, b)` distances in pixels.
    pub ltrb: Var,
    /// `(stride, rows, cols)` per level.
    pub levels: Vec<(usize, usize, usize)>,
}

#[derive(Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    pub sgie: Option<Sgie>,
    pub stem: ConvBnAct,
    pub stages: Vec<Stage>,
    /// Top-down nodes (coarse to fine), then bottom-up nodes (fine to coarse).
    pub top_down: Vec<FusionNode>,
    pub downsample: Vec<ConvBnAct>,
    pub bottom_up: Vec<FusionNode>,
    pub head: Vec<HeadLevel>,
}

pub fn build_msgnet<R: Rng + ?Sized>(config: DetectorConfig, rng: &mut R) -> Result<Detector> {
    config.validate()?;
    let stem = ConvBnAct::new(3, config.stem_width, 3, 2, rng);
    let mut stages = Vec::with_capacity(config.widths.len());
    let mut prev = config.stem_width;
    for &w in &config.widths {
        let last = if config.use_pld {
            StageFinal::Pld(PldConv::new(config.pld.block(w), rng)?)
        } else {
            StageFinal::Plain(Conv2d::same(w, w, (3, 3), (1, 1), false, rng))
        };
        stages.push(Stage {
            down: ConvBnAct::new(prev, w, 3, 2, rng),
            block: ConvBnAct::new(w, w, 3, 1, rng),
            last,
            last_bn: BatchNorm2d::new(w),
        });
        prev = w;
    }

    let level_widths: Vec<usize> = config
        .strides
        .iter()
        .map(|&s| config.widths[DetectorConfig::stage_of_stride(s)])
        .collect();
    let n = level_widths.len();
    let mut top_down = Vec::new();
    for l in (0..n.saturating_sub(1)).rev() {
        let coarse = if l + 1 == n - 1 { level_widths[n - 1] } else { level_widths[l + 1] };
        top_down.push(FusionNode::new(&config, coarse + level_widths[l], level_widths[l], rng)?);
    }
    let mut downsample = Vec::new();
    let mut bottom_up = Vec::new();
    for l in 1..n {
        downsample.push(ConvBnAct::new(level_widths[l - 1], level_widths[l - 1], 3, 2, rng));
        bottom_up.push(FusionNode::new(&config, level_widths[l - 1] + level_widths[l], level_widths[l], rng)?);
    }

    let h = config.head_width;
    let mut head = Vec::with_capacity(n);
    for &w in &level_widths {
        let cls_out = Conv2d::same(h, config.num_classes, (1, 1), (1, 1), true, rng);
        cls_out.bias.as_ref().unwrap().update(|b| b.fill(CLS_PRIOR_BIAS));
        head.push(HeadLevel {
            cls_stem: ConvBnAct::new(w, h, 3, 1, rng),
            cls_out,
            reg_stem: ConvBnAct::new(w, h, 3, 1, rng),
            reg_out: Conv2d::same(h, 4, (1, 1), (1, 1), true, rng),
        });
    }

    let sgie = if config.use_sgie {
        Some(Sgie::new(config.sgie.clone(), rng)?)
    } else {
        None
    };
    Ok(Detector {
        config,
        sgie,
        stem,
        stages,
        top_down,
        downsample,
        bottom_up,
        head,
    })
}

fn flatten_nhwc(x: &Var) -> Var {
    let s = x.shape().to_vec();
    x.permute(&[0, 2, 3, 1]).reshape(&[s[0], s[2] * s[3], s[1]])
}

impl Detector {
    /// Checks an `[N, 3, H, W]` batch in `[0, 1]` with sizes divisible by the largest stride.
    pub fn check_images(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        let m = self.config.max_stride();
        if s.len() != 4 || s[0] == 0 || s[1] != 3 {
            return Err(Error::shape(format!("detector expects a non-empty [N, 3, H, W] batch, got {s:?}")));
        }
        if s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::shape(format!("image size {}x{} must be a positive multiple of {m}", s[2], s[3])));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Optional enhancement front-end. A frozen enhancer runs without
    /// recording gradients.
    fn preprocess(&self, images: &Tensor) -> Result<Var> {
        let x = Var::constant(images.clone());
        match &self.sgie {
            None => Ok(x),
            Some(sgie) if self.config.finetune_sgie => sgie.forward(&x),
            Some(sgie) => {
                let _g = no_grad();
                Ok(sgie.forward(&x)?.detach())
            }
        }
    }

    /// Pyramid features at the configured strides, after the neck.
    pub fn features(&self, images: &Tensor, train: bool) -> Result<Vec<Var>> {
        self.check_images(images)?;
        let mut x = self.stem.forward(&self.preprocess(images)?, train);
        let mut stage_out = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            x = st.forward(&x, train)?;
            stage_out.push(x.clone());
        }
        let levels: Vec<Var> = self
            .config
            .strides
            .iter()
            .map(|&s| stage_out[DetectorConfig::stage_of_stride(s)].clone())
            .collect();
        let n = levels.len();
        // Top-down: td[l] = node(concat(up(td[l+1]), C_l)), starting from C_last.
        let mut td: Vec<Var> = levels.clone();
        for (k, l) in (0..n.saturating_sub(1)).rev().enumerate() {
            let up = td[l + 1].upsample_nearest(2);
            td[l] = self.top_down[k].forward(&Var::concat(&[up, levels[l].clone()], 1), train)?;
        }
        // Bottom-up: out[l] = node(concat(down(out[l-1]), td[l])).
        let mut out: Vec<Var> = vec![td[0].clone()];
        for l in 1..n {
            let down = self.downsample[l - 1].forward(&out[l - 1], train);
            out.push(self.bottom_up[l - 1].forward(&Var::concat(&[down, td[l].clone()], 1), train)?);
        }
        Ok(out)
    }

    pub fn forward(&self, images: &Tensor, train: bool) -> Result<HeadOutput> {
        let feats = self.features(images, train)?;
        let mut cls = Vec::with_capacity(feats.len());
        let mut ltrb = Vec::with_capacity(feats.len());
        let mut levels = Vec::with_capacity(feats.len());
        for ((f, h), &stride) in feats.iter().zip(&self.head).zip(&self.config.strides) {
            let c = h.cls_out.forward(&h.cls_stem.forward(f, train));
            let r = h.reg_out.forward(&h.reg_stem.forward(f, train)).softplus().scale(stride as f64);
            levels.push((stride, f.shape()[2], f.shape()[3]));
            cls.push(flatten_nhwc(&c));
            ltrb.push(flatten_nhwc(&r));
        }
        Ok(HeadOutput {
            cls: Var::concat(&cls, 1),
            ltrb: Var::concat(&ltrb, 1),
            levels,
        })
    }

    /// Parameters updated by detector training: everything except a frozen enhancer.
    pub fn trainable(&self) -> Vec<Param> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| {
            let frozen_sgie = name.starts_with("sgie.") && !self.config.finetune_sgie;
            if p.trainable() && !frozen_sgie {
                out.push(p.clone());
            }
        });
        out
    }
}

impl Module for Detector {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(s) = &self.sgie {
            s.visit_params(&join(prefix, "sgie"), f);
        }
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
        for (i, n) in self.top_down.iter().enumerate() {
            n.visit_params(&join(prefix, &format!("neck.top_down{i}")), f);
        }
        for (i, (d, n)) in self.downsample.iter().zip(&self.bottom_up).enumerate() {
            d.visit_params(&join(prefix, &format!("neck.down{i}")), f);
            n.visit_params(&join(prefix, &format!("neck.bottom_up{i}")), f);
        }
        for (i, h) in self.head.iter().enumerate() {
            h.visit_params(&join(prefix, &format!("head{i}")), f);
        }
    }
}
