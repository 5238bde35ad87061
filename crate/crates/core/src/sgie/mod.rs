//! Scene-guided image enhancement: a scene discriminator whose embedding
//! conditions the prompts of an encoder–decoder enhancer.

pub mod discriminator;
pub mod enhancer;
pub mod train;

pub use discriminator::{SceneDiscriminator, SceneEmbedding, EMBED_DIM, NUM_SCENES};
pub use enhancer::{fuse_scene_prompt, Enhancer, PromptBank, PromptLevel};
pub use train::{scene_accuracy, train_discriminator, train_enhancer, enhancement_psnr, TrainSettings};

use msgnet_autograd::nn::{join, Module};
use msgnet_autograd::{Param, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgieConfig {
    pub discriminator_widths: Vec<usize>,
    pub enhancer_width: usize,
    pub prompts: usize,
}

impl Default for SgieConfig {
    fn default() -> Self {
        Self {
            discriminator_widths: vec![16, 32, 64],
            enhancer_width: 8,
            prompts: 5,
        }
    }
}

#[derive(Debug)]
pub struct Sgie {
    pub config: SgieConfig,
    pub discriminator: SceneDiscriminator,
    pub enhancer: Enhancer,
}

impl Sgie {
    pub fn new<R: Rng + ?Sized>(config: SgieConfig, rng: &mut R) -> Result<Self> {
        let discriminator = SceneDiscriminator::new(&config.discriminator_widths, rng)?;
        let enhancer = Enhancer::new(config.enhancer_width, config.prompts, rng)?;
        Ok(Self {
            config,
            discriminator,
            enhancer,
        })
    }

    /// Classifies the batch in evaluation mode, then enhances it.
    pub fn forward(&self, images: &Var) -> Result<Var> {
        let scene = self.discriminator.classify_scene(images)?;
        self.enhancer.enhance(images, &scene)
    }
}

impl Module for Sgie {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.discriminator.visit_params(&join(prefix, "discriminator"), f);
        self.enhancer.visit_params(&join(prefix, "enhancer"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use msgnet_autograd::nn::{uniform_tensor, Linear};
    use msgnet_autograd::{no_grad, Tensor};
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images(n: usize, h: usize, w: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Var::constant(uniform_tensor(&[n, 3, h, w], 0.5, &mut rng).mapv(|v| v + 0.5))
    }

    #[test]
    fn embedding_shapes_and_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = SceneDiscriminator::new(&[4, 8], &mut rng).unwrap();
        let e = d.classify_scene(&images(3, 16, 12, 2)).unwrap();
        assert_eq!(e.vector.shape(), &[3, EMBED_DIM]);
        assert_eq!(e.logits.shape(), &[3, NUM_SCENES]);
        for row in e.probabilities().value().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!(d.classify_scene(&Var::constant(Tensor::zeros(IxDyn(&[1, 1, 8, 8])))).is_err());
        let again = d.classify_scene(&images(3, 16, 12, 2)).unwrap();
        assert_eq!(again.logits.value(), e.logits.value());
    }

    #[test]
    fn fuse_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let content = Var::constant(uniform_tensor(&[2, 6], 1.0, &mut rng));
        let zero_scene = Var::constant(Tensor::zeros(IxDyn(&[2, EMBED_DIM])));
        let proj = Linear::new(EMBED_DIM, 6, &mut rng);
        let out = fuse_scene_prompt(&content, &zero_scene, &proj).unwrap();
        assert_eq!(out.value(), content.value());

        let s1 = Var::constant(uniform_tensor(&[2, EMBED_DIM], 1.0, &mut rng));
        let s2 = Var::constant(uniform_tensor(&[2, EMBED_DIM], 1.0, &mut rng));
        let joint = fuse_scene_prompt(&content, &s1.add(&s2), &proj).unwrap();
        let split = fuse_scene_prompt(&content, &s1, &proj).unwrap().add(&proj.forward(&s2));
        let diff = (joint.value() - split.value()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-12);
        assert_ne!(split.value(), fuse_scene_prompt(&content, &s2, &proj).unwrap().value());

        let bad = Linear::new(EMBED_DIM, 5, &mut rng);
        assert!(fuse_scene_prompt(&content, &s1, &bad).is_err());
    }

    #[test]
    fn enhancer_preserves_size_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sgie = Sgie::new(
            SgieConfig {
                discriminator_widths: vec![4],
                enhancer_width: 4,
                prompts: 3,
            },
            &mut rng,
        )
        .unwrap();
        let x = images(2, 8, 12, 5);
        let _g = no_grad();
        let y = sgie.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.value().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(sgie.enhancer.invocations(), 1);
        let outside = Var::constant(x.value().mapv(|v| v * 2.0));
        assert!(sgie.forward(&outside).is_err());
        assert!(sgie.forward(&images(1, 6, 8, 1)).is_err());
    }

    #[test]
    fn prompt_bank_needs_two_prompts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(PromptBank::new(1, 4, &mut rng).is_err());
        let bank = PromptBank::new(5, 4, &mut rng).unwrap();
        let w = bank.weights(&Var::constant(uniform_tensor(&[3, 4], 1.0, &mut rng)));
        for row in w.value().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
