//! Trains and scores one detector per module on/off combination.

use msgnet_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DetectorConfig;
use super::decode::detect_batch;
use super::model::build_msgnet;
use super::train::{train_detector, DetectorTrainSettings};
use crate::checkpoint::copy_params;
use crate::datakit::{stack_images, ImageRecord};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_map, run_ablation, AblationFlags, AblationRow, ImagePredictions};
use crate::sgie::Sgie;

pub fn ablation_config(base: &DetectorConfig, flags: AblationFlags) -> DetectorConfig {
    DetectorConfig {
        use_sgie: flags.sgie,
        use_pld: flags.pld,
        use_msdrf: flags.msdrf,
        ..base.clone()
    }
}

/// Images with their records, index-aligned.
#[derive(Clone, Copy, Debug)]
pub struct LabeledSet<'a> {
    pub images: &'a [Tensor],
    pub records: &'a [ImageRecord],
}

impl LabeledSet<'_> {
    fn check(&self) -> Result<()> {
        if self.images.len() != self.records.len() || self.images.is_empty() {
            return Err(Error::invalid("labeled set needs one record per image and at least one image"));
        }
        Ok(())
    }
}

/// Batched inference over a set, tagged with the record paths.
pub fn predict_set(model: &super::Detector, set: LabeledSet<'_>, batch_size: usize) -> Result<Vec<ImagePredictions>> {
    set.check()?;
    let mut out = Vec::with_capacity(set.images.len());
    for (imgs, recs) in set.images.chunks(batch_size.max(1)).zip(set.records.chunks(batch_size.max(1))) {
        let refs: Vec<&Tensor> = imgs.iter().collect();
        for (rec, detections) in recs.iter().zip(detect_batch(model, &stack_images(&refs)?)?) {
            out.push(ImagePredictions {
                image: rec.image.clone(),
                detections,
            });
        }
    }
    Ok(out)
}

/// Runs the matrix. Every row starts from the same `model_seed`; rows with
/// the enhancer enabled load `pretrained_sgie` when given.
pub fn run_detector_ablation(
    base: &DetectorConfig,
    matrix: &[AblationFlags],
    settings: &DetectorTrainSettings,
    train: LabeledSet<'_>,
    val: LabeledSet<'_>,
    pretrained_sgie: Option<&Sgie>,
    model_seed: u64,
) -> Result<Vec<AblationRow>> {
    train.check()?;
    val.check()?;
    let objects: Vec<_> = train.records.iter().map(|r| r.objects.clone()).collect();
    run_ablation(matrix, |flags| {
        let config = ablation_config(base, flags);
        let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
        let model = build_msgnet(config, &mut rng)?;
        if let (Some(dst), Some(src)) = (&model.sgie, pretrained_sgie) {
            copy_params(src, dst)?;
        }
        train_detector(&model, train.images, &objects, settings)?;
        let preds = predict_set(&model, val, settings.batch_size)?;
        Ok(evaluate_map(&preds, val.records)?.map_50_95)
    })
}
