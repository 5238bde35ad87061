//! Six-way scene classifier with a 512-d penultimate embedding.

use msgnet_autograd::nn::{join, BatchNorm2d, Conv2d, Linear, Module};
use msgnet_autograd::{Conv2dSpec, Param, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::SceneClass;

pub const EMBED_DIM: usize = 512;
pub const NUM_SCENES: usize = 6;

/// Output of the discriminator for a batch.
#[derive(Clone, Debug)]
pub struct SceneEmbedding {
    /// `[N, 512]`.
    pub vector: Var,
    /// `[N, 6]`, in [`SceneClass::ALL`] order.
    pub logits: Var,
}

impl SceneEmbedding {
    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Var {
        self.logits.log_softmax(1).exp()
    }

    pub fn predicted(&self) -> Vec<SceneClass> {
        self.logits
            .value()
            .outer_iter()
            .map(|row| {
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                SceneClass::ALL[best]
            })
            .collect()
    }

    /// Same logits, embedding detached from the graph.
    pub fn detached(&self) -> Self {
        Self {
            vector: self.vector.detach(),
            logits: self.logits.detach(),
        }
    }
}

fn conv3(in_ch: usize, out_ch: usize, stride: usize, rng: &mut (impl Rng + ?Sized)) -> Conv2d {
    let spec = Conv2dSpec {
        stride: (stride, stride),
        padding: (1, 1),
        dilation: (1, 1),
    };
    Conv2d::new(in_ch, out_ch, (3, 3), spec, false, rng)
}

#[derive(Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut (impl Rng + ?Sized)) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            let spec = Conv2dSpec {
                stride: (stride, stride),
                ..Conv2dSpec::default()
            };
            (Conv2d::new(in_ch, out_ch, (1, 1), spec, false, rng), BatchNorm2d::new(out_ch))
        });
        Self {
            conv1: conv3(in_ch, out_ch, stride, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: conv3(out_ch, out_ch, 1, rng),
            bn2: BatchNorm2d::new(out_ch),
            shortcut,
        }
    }

    fn forward(&self, x: &Var, train: bool) -> Var {
        let y = self.bn1.forward(&self.conv1.forward(x), train).relu();
        let y = self.bn2.forward(&self.conv2.forward(&y), train);
        let skip = match &self.shortcut {
            Some((c, bn)) => bn.forward(&c.forward(x), train),
            None => x.clone(),
        };
        y.add(&skip).relu()
    }
}

impl Module for BasicBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        if let Some((c, bn)) = &self.shortcut {
            c.visit_params(&join(prefix, "shortcut.conv"), f);
            bn.visit_params(&join(prefix, "shortcut.bn"), f);
        }
    }
}

/// Residual classifier: strided stem, one basic block per width (the
/// first at stride 1, the rest at stride 2), global average pooling, a
/// 512-d ReLU embedding and a linear six-way head.
#[derive(Debug)]
pub struct SceneDiscriminator {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    embed: Linear,
    head: Linear,
}

impl SceneDiscriminator {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config("sgie.discriminator_widths", "need at least one positive width"));
        }
        let stem = conv3(3, widths[0], 2, rng);
        let mut blocks = Vec::with_capacity(widths.len());
        let mut prev = widths[0];
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(BasicBlock::new(prev, w, if i == 0 { 1 } else { 2 }, rng));
            prev = w;
        }
        Ok(Self {
            stem,
            stem_bn: BatchNorm2d::new(widths[0]),
            blocks,
            embed: Linear::new(prev, EMBED_DIM, rng),
            head: Linear::new(EMBED_DIM, NUM_SCENES, rng),
        })
    }

    pub fn forward(&self, images: &Var, train: bool) -> Result<SceneEmbedding> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(format!("scene discriminator expects [N, 3, H, W], got {s:?}")));
        }
        let mut x = self.stem_bn.forward(&self.stem.forward(images), train).relu();
        for b in &self.blocks {
            x = b.forward(&x, train);
        }
        let pooled = x.mean_axes(&[2, 3], false);
        let vector = self.embed.forward(&pooled).relu();
        let logits = self.head.forward(&vector);
        Ok(SceneEmbedding { vector, logits })
    }

    /// Evaluation-mode classification of a batch.
    pub fn classify_scene(&self, images: &Var) -> Result<SceneEmbedding> {
        self.forward(images, false)
    }
}

impl Module for SceneDiscriminator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        self.stem_bn.visit_params(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.embed.visit_params(&join(prefix, "embed"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}
