use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::OffsetLimits;
use crate::pld::PldConfig;
use crate::sgie::SgieConfig;

/// PLD-Conv settings shared by every backbone stage; channel counts come
/// from the stage widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PldSettings {
    pub kernel_x: usize,
    pub kernel_y: usize,
    pub dilation_x: usize,
    pub limits: OffsetLimits,
}

impl Default for PldSettings {
    fn default() -> Self {
        Self {
            kernel_x: 3,
            kernel_y: 3,
            dilation_x: 2,
            limits: OffsetLimits::default(),
        }
    }
}

impl PldSettings {
    pub fn block(&self, channels: usize) -> PldConfig {
        PldConfig {
            in_channels: channels,
            out_channels: channels,
            kernel_x: self.kernel_x,
            kernel_y: self.kernel_y,
            dilation_x: self.dilation_x,
            limits: self.limits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub num_classes: usize,
    /// Output width of the stride-2 stem.
    pub stem_width: usize,
    /// One width per backbone stage; stage `i` runs at stride `2^(i+2)`.
    pub widths: Vec<usize>,
    /// Output strides of the pyramid, consecutive powers of two.
    pub strides: Vec<usize>,
    pub head_width: usize,
    pub use_pld: bool,
    pub pld: PldSettings,
    pub use_msdrf: bool,
    pub msdrf_rates: Vec<usize>,
    pub use_sgie: bool,
    /// Train the enhancer jointly with the detector instead of freezing it.
    pub finetune_sgie: bool,
    pub sgie: SgieConfig,
    /// A box is assigned to the first level whose stride times this factor
    /// covers its longer side; the last level takes the rest.
    pub assign_scale: f64,
    pub box_loss_weight: f64,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            stem_width: 16,
            widths: vec![16, 32, 64, 128],
            strides: vec![8, 16, 32],
            head_width: 32,
            use_pld: true,
            pld: PldSettings::default(),
            use_msdrf: true,
            msdrf_rates: vec![1, 3, 5],
            use_sgie: false,
            finetune_sgie: false,
            sgie: SgieConfig::default(),
            assign_scale: 8.0,
            box_loss_weight: 2.0,
            score_threshold: 0.25,
            nms_iou_threshold: 0.5,
            max_detections: 100,
        }
    }
}

impl DetectorConfig {
    /// Index of the backbone stage producing stride `s`.
    pub fn stage_of_stride(s: usize) -> usize {
        s.trailing_zeros() as usize - 2
    }

    pub fn max_stride(&self) -> usize {
        *self.strides.last().unwrap_or(&1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("detector.num_classes", "must be positive"));
        }
        if self.strides.is_empty() {
            return Err(Error::config("detector.strides", "at least one stride is required"));
        }
        let s = &self.strides;
        if s.iter().any(|&v| v < 4 || !v.is_power_of_two()) || s.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::config(
                "detector.strides",
                format!("strides must be consecutive powers of two >= 4, got {s:?}"),
            ));
        }
        let stages = Self::stage_of_stride(self.max_stride()) + 1;
        if self.widths.len() != stages {
            return Err(Error::config(
                "detector.widths",
                format!(
                    "inconsistent channel plan: max stride {} needs {stages} stage widths, got {}",
                    self.max_stride(),
                    self.widths.len()
                ),
            ));
        }
        if self.stem_width == 0 || self.head_width == 0 || self.widths.contains(&0) {
            return Err(Error::config("detector.widths", "channel widths must be positive"));
        }
        if self.use_pld {
            self.pld.block(1).validate()?;
        }
        if !(self.assign_scale > 0.0 && self.assign_scale.is_finite()) {
            return Err(Error::config("detector.assign_scale", "must be positive"));
        }
        if !(self.box_loss_weight >= 0.0 && self.box_loss_weight.is_finite()) {
            return Err(Error::config("detector.box_loss_weight", "must be finite and >= 0"));
        }
        // A threshold of exactly 1 is accepted and yields no detections.
        if !(self.score_threshold > 0.0 && self.score_threshold <= 1.0) {
            return Err(Error::config("detector.score_threshold", "must lie in (0, 1]"));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return Err(Error::config("detector.nms_iou_threshold", "must lie in (0, 1)"));
        }
        if self.max_detections == 0 {
            return Err(Error::config("detector.max_detections", "must be positive"));
        }
        Ok(())
    }

    /// Extra trainable scalars when every stage-final `3 × 3` convolution is
    /// a PLD-Conv block instead of a plain bias-free convolution.
    pub fn pld_param_delta(&self) -> isize {
        self.widths
            .iter()
            .map(|&w| self.pld.block(w).param_count() as isize - (9 * w * w) as isize)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        DetectorConfig::default().validate().unwrap();
    }

    #[test]
    fn inconsistent_plans_are_rejected() {
        let mut c = DetectorConfig::default();
        c.widths.pop();
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "detector.widths"));
        let mut c = DetectorConfig::default();
        c.strides = vec![8, 32];
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.strides = vec![12];
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.score_threshold = 0.0;
        assert!(c.validate().is_err());
        c.score_threshold = 1.0;
        c.validate().unwrap();
        c.nms_iou_threshold = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stage_index() {
        assert_eq!(DetectorConfig::stage_of_stride(4), 0);
        assert_eq!(DetectorConfig::stage_of_stride(8), 1);
        assert_eq!(DetectorConfig::stage_of_stride(32), 3);
    }
}
