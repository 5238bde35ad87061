//! Prompt-conditioned U-shaped enhancer.
//!
//! Each decoder level derives a content prompt from its own features (a
//! `3 × 3` conv head followed by global average pooling), adds the projected
//! scene embedding, and uses the result to weight a bank of learnable
//! prompts. The mixed prompt is added to the level's features as a
//! per-channel offset.

use std::sync::atomic::{AtomicUsize, Ordering};

use msgnet_autograd::nn::{join, uniform_tensor, Conv2d, Linear, Module};
use msgnet_autograd::{Conv2dSpec, Param, Var};
use rand::Rng;

use super::discriminator::{SceneEmbedding, EMBED_DIM};
use crate::error::{Error, Result};

/// `content_prompt + projection(scene_vector)`.
///
/// `content_prompt` is `[N, C]`, `scene_vector` is `[N, 512]` (or `[1, 512]`,
/// broadcast over the batch) and `projection` maps 512 to `C`.
pub fn fuse_scene_prompt(content_prompt: &Var, scene_vector: &Var, projection: &Linear) -> Result<Var> {
    let (c, v, w) = (content_prompt.shape(), scene_vector.shape(), projection.weight.shape());
    let batch_ok = v.len() == 2 && c.len() == 2 && (v[0] == c[0] || v[0] == 1);
    if !batch_ok || w[1] != v[1] || w[0] != c[1] {
        return Err(Error::shape(format!(
            "cannot fuse scene {v:?} through projection {w:?} onto prompt {c:?}"
        )));
    }
    Ok(content_prompt.add(&projection.forward(scene_vector)))
}

/// `P` learnable prompts of width `C`, mixed by softmax weights.
#[derive(Debug)]
pub struct PromptBank {
    /// `[P, C]`.
    pub prompts: Param,
    /// `C → P` weighting network.
    pub mixer: Linear,
}

impl PromptBank {
    pub fn new<R: Rng + ?Sized>(size: usize, channels: usize, rng: &mut R) -> Result<Self> {
        if size < 2 {
            return Err(Error::config("sgie.prompts", format!("prompt bank needs at least 2 prompts, got {size}")));
        }
        Ok(Self {
            prompts: Param::new(uniform_tensor(&[size, channels], 0.1, rng)),
            mixer: Linear::new(channels, size, rng),
        })
    }

    pub fn size(&self) -> usize {
        self.prompts.shape()[0]
    }

    /// Softmax weights `[N, P]` for the conditioning prompt `[N, C]`.
    pub fn weights(&self, condition: &Var) -> Var {
        self.mixer.forward(condition).log_softmax(1).exp()
    }

    /// Weighted sum of the prompts, `[N, C]`.
    pub fn mix(&self, condition: &Var) -> Var {
        self.weights(condition).matmul(&self.prompts.var())
    }
}

impl Module for PromptBank {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "prompts"), &self.prompts);
        self.mixer.visit_params(&join(prefix, "mixer"), f);
    }
}

/// Prompt machinery attached to one decoder level.
#[derive(Debug)]
pub struct PromptLevel {
    pub content_head: Conv2d,
    /// Zero-initialised `512 → C` map, so the scene path starts inactive.
    pub projection: Linear,
    pub bank: PromptBank,
}

impl PromptLevel {
    fn new<R: Rng + ?Sized>(channels: usize, prompts: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            content_head: Conv2d::same(channels, channels, (3, 3), (1, 1), true, rng),
            projection: Linear::zeros(EMBED_DIM, channels),
            bank: PromptBank::new(prompts, channels, rng)?,
        })
    }

    pub fn content_prompt(&self, features: &Var) -> Var {
        self.content_head.forward(features).mean_axes(&[2, 3], false)
    }

    fn inject(&self, features: &Var, scene: &SceneEmbedding) -> Result<Var> {
        let fused = fuse_scene_prompt(&self.content_prompt(features), &scene.vector, &self.projection)?;
        let prompt = self.bank.mix(&fused);
        let s = prompt.shape().to_vec();
        Ok(features.add(&prompt.reshape(&[s[0], s[1], 1, 1])))
    }
}

impl Module for PromptLevel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.content_head.visit_params(&join(prefix, "content_head"), f);
        self.projection.visit_params(&join(prefix, "projection"), f);
        self.bank.visit_params(&join(prefix, "bank"), f);
    }
}

fn down(in_ch: usize, out_ch: usize, rng: &mut (impl Rng + ?Sized)) -> Conv2d {
    let spec = Conv2dSpec {
        stride: (2, 2),
        padding: (1, 1),
        dilation: (1, 1),
    };
    Conv2d::new(in_ch, out_ch, (3, 3), spec, true, rng)
}

fn conv(in_ch: usize, out_ch: usize, rng: &mut (impl Rng + ?Sized)) -> Conv2d {
    Conv2d::same(in_ch, out_ch, (3, 3), (1, 1), true, rng)
}

/// Three-level encoder–decoder with widths `c, 2c, 4c`, skip connections,
/// prompt injection on both decoder levels and a residual output clamped to
/// `[0, 1]`. Spatial sizes must be multiples of 4.
#[derive(Debug)]
pub struct Enhancer {
    enc1: [Conv2d; 2],
    down1: Conv2d,
    enc2: Conv2d,
    down2: Conv2d,
    bottleneck: Conv2d,
    up2: Conv2d,
    merge2: Conv2d,
    post2: Conv2d,
    up1: Conv2d,
    merge1: Conv2d,
    post1: Conv2d,
    out: Conv2d,
    /// Decoder prompt levels, coarse (`2c`) first.
    pub levels: [PromptLevel; 2],
    invocations: AtomicUsize,
}

impl Enhancer {
    pub fn new<R: Rng + ?Sized>(width: usize, prompts: usize, rng: &mut R) -> Result<Self> {
        if width == 0 {
            return Err(Error::config("sgie.enhancer_width", "must be positive"));
        }
        let c = width;
        let out = conv(c, 3, rng);
        // Start near the identity map.
        out.rescale(0.1);
        Ok(Self {
            enc1: [conv(3, c, rng), conv(c, c, rng)],
            down1: down(c, 2 * c, rng),
            enc2: conv(2 * c, 2 * c, rng),
            down2: down(2 * c, 4 * c, rng),
            bottleneck: conv(4 * c, 4 * c, rng),
            up2: conv(4 * c, 2 * c, rng),
            merge2: conv(4 * c, 2 * c, rng),
            post2: conv(2 * c, 2 * c, rng),
            up1: conv(2 * c, c, rng),
            merge1: conv(2 * c, c, rng),
            post1: conv(c, c, rng),
            out,
            levels: [PromptLevel::new(2 * c, prompts, rng)?, PromptLevel::new(c, prompts, rng)?],
            invocations: AtomicUsize::new(0),
        })
    }

    /// Number of completed [`enhance`](Self::enhance) calls.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn enhance(&self, images: &Var, scene: &SceneEmbedding) -> Result<Var> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(format!("enhancer expects [N, 3, H, W], got {s:?}")));
        }
        if s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::shape(format!("enhancer needs sizes divisible by 4, got {}x{}", s[2], s[3])));
        }
        if let Some(v) = images.value().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("enhancer input value {v} outside [0, 1]")));
        }
        let e1 = self.enc1[1].forward(&self.enc1[0].forward(images).silu()).silu();
        let e2 = self.enc2.forward(&self.down1.forward(&e1).silu()).silu();
        let b = self.bottleneck.forward(&self.down2.forward(&e2).silu()).silu();

        let d2 = self.up2.forward(&b.upsample_nearest(2)).silu();
        let d2 = self.merge2.forward(&Var::concat(&[d2, e2], 1)).silu();
        let d2 = self.post2.forward(&self.levels[0].inject(&d2, scene)?).silu();

        let d1 = self.up1.forward(&d2.upsample_nearest(2)).silu();
        let d1 = self.merge1.forward(&Var::concat(&[d1, e1], 1)).silu();
        let d1 = self.post1.forward(&self.levels[1].inject(&d1, scene)?).silu();

        let restored = images.add(&self.out.forward(&d1)).clamp(0.0, 1.0);
        self.invocations.fetch_add(1, Ordering::Relaxed);
        Ok(restored)
    }
}

impl Module for Enhancer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        let convs: [(&str, &Conv2d); 13] = [
            ("enc1.0", &self.enc1[0]),
            ("enc1.1", &self.enc1[1]),
            ("down1", &self.down1),
            ("enc2", &self.enc2),
            ("down2", &self.down2),
            ("bottleneck", &self.bottleneck),
            ("up2", &self.up2),
            ("merge2", &self.merge2),
            ("post2", &self.post2),
            ("up1", &self.up1),
            ("merge1", &self.merge1),
            ("post1", &self.post1),
            ("out", &self.out),
        ];
        for (name, c) in convs {
            c.visit_params(&join(prefix, name), f);
        }
        for (i, l) in self.levels.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("level{i}")), f);
        }
    }
}
