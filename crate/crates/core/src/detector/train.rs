use msgnet_autograd::optim::{Adam, Optimizer, Sgd};
use msgnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::loss::{forward_train, LossReport};
use super::model::Detector;
use crate::batching::BatchSampler;
use crate::datakit::{stack_images, BoxAnnotation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// SGD only.
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DetectorTrainSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl DetectorTrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Sgd => Box::new(Sgd::new(self.learning_rate, self.momentum, self.weight_decay)),
            OptimizerKind::Adam => {
                let mut a = Adam::new(self.learning_rate);
                a.weight_decay = self.weight_decay;
                Box::new(a)
            }
        }
    }
}

/// Trains on `images[i]` (`[3, H, W]`, all the same size) with boxes
/// `objects[i]`. Batches follow a seeded per-epoch permutation. Returns the
/// per-step loss reports.
pub fn train_detector(
    model: &Detector,
    images: &[Tensor],
    objects: &[Vec<BoxAnnotation>],
    settings: &DetectorTrainSettings,
) -> Result<Vec<LossReport>> {
    settings.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if images.len() != objects.len() {
        return Err(Error::invalid(format!("{} images but {} annotation lists", images.len(), objects.len())));
    }
    let params = model.trainable();
    let mut opt = settings.optimizer();
    let mut sampler = BatchSampler::new(images.len(), settings.seed);
    let mut log = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let idx = sampler.next_batch(settings.batch_size);
        let picked: Vec<&Tensor> = idx.iter().map(|&i| &images[i]).collect();
        let boxes: Vec<&[BoxAnnotation]> = idx.iter().map(|&i| objects[i].as_slice()).collect();
        let (loss, report) = forward_train(model, &stack_images(&picked)?, &boxes)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::invalid(format!("detector loss diverged at step {step}")),
                other => other,
            })?;
        log.push(report);
        opt.step(&params, &loss.backward());
    }
    Ok(log)
}
