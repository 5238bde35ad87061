//! Staged training: the discriminator on scene labels, then the enhancer on
//! (degraded, clean) pairs with the discriminator frozen.

use msgnet_autograd::nn::trainable_params;
use msgnet_autograd::optim::{Adam, Optimizer};
use msgnet_autograd::{cross_entropy, no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{SceneDiscriminator, Sgie};
use crate::batching::BatchSampler;
use crate::datakit::stack_images;
use crate::error::{Error, Result};
use crate::evalkit::psnr;
use crate::labels::SceneClass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

fn batch(images: &[&Tensor], idx: &[usize]) -> Result<Var> {
    let picked: Vec<&Tensor> = idx.iter().map(|&i| images[i]).collect();
    Ok(Var::constant(stack_images(&picked)?))
}

fn check_loss(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("loss diverged at step {step}")))
    }
}

/// Cross-entropy training with Adam. Returns the per-step loss.
pub fn train_discriminator(
    disc: &SceneDiscriminator,
    images: &[Tensor],
    labels: &[SceneClass],
    settings: &TrainSettings,
) -> Result<Vec<f64>> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::invalid("need one label per image and at least one image"));
    }
    let refs: Vec<&Tensor> = images.iter().collect();
    let params = trainable_params(disc);
    let mut opt = Adam::new(settings.learning_rate);
    let mut sampler = BatchSampler::new(images.len(), settings.seed);
    let mut log = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let idx = sampler.next_batch(settings.batch_size);
        let x = batch(&refs, &idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i].index()).collect();
        let loss = cross_entropy(&disc.forward(&x, true)?.logits, &y);
        check_loss(loss.scalar(), step)?;
        log.push(loss.scalar());
        opt.step(&params, &loss.backward());
    }
    Ok(log)
}

/// Fraction of correctly classified images, evaluation mode.
pub fn scene_accuracy(disc: &SceneDiscriminator, images: &[Tensor], labels: &[SceneClass]) -> Result<f64> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let _g = no_grad();
    let mut correct = 0;
    for (chunk, truth) in images.chunks(32).zip(labels.chunks(32)) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let pred = disc.classify_scene(&Var::constant(stack_images(&refs)?))?.predicted();
        correct += pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / images.len() as f64)
}

/// L1 training of the enhancer with Adam; the discriminator only supplies
/// (detached, evaluation-mode) scene embeddings. Returns the per-step loss.
pub fn train_enhancer(sgie: &Sgie, pairs: &[(Tensor, Tensor)], settings: &TrainSettings) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let degraded: Vec<&Tensor> = pairs.iter().map(|p| &p.0).collect();
    let clean: Vec<&Tensor> = pairs.iter().map(|p| &p.1).collect();
    let params = trainable_params(&sgie.enhancer);
    let mut opt = Adam::new(settings.learning_rate);
    let mut sampler = BatchSampler::new(pairs.len(), settings.seed);
    let mut log = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let idx = sampler.next_batch(settings.batch_size);
        let x = batch(&degraded, &idx)?;
        let target = batch(&clean, &idx)?;
        let scene = {
            let _g = no_grad();
            sgie.discriminator.classify_scene(&x)?
        };
        let out = sgie.enhancer.enhance(&x, &scene)?;
        let loss = out.sub(&target).abs().mean();
        check_loss(loss.scalar(), step)?;
        log.push(loss.scalar());
        opt.step(&params, &loss.backward());
    }
    Ok(log)
}

/// Mean PSNR (peak 1) of the enhanced and of the unprocessed degraded
/// images against their clean references.
pub fn enhancement_psnr(sgie: &Sgie, pairs: &[(Tensor, Tensor)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    let _g = no_grad();
    let (mut enhanced, mut degraded) = (0.0, 0.0);
    for (x, clean) in pairs {
        let input = Var::constant(x.clone().insert_axis(ndarray::Axis(0)));
        let out = sgie.forward(&input)?.value().index_axis(ndarray::Axis(0), 0).to_owned();
        enhanced += psnr(&out, clean, 1.0)?;
        degraded += psnr(x, clean, 1.0)?;
    }
    let n = pairs.len() as f64;
    Ok((enhanced / n, degraded / n))
}
