//! Detection and restoration metrics, plus the module-ablation harness.

pub mod ablation;
pub mod map;

pub use ablation::{full_matrix, run_ablation, write_ablation_csv, AblationFlags, AblationRow};
pub use map::{evaluate_map, read_predictions, write_predictions, ImagePredictions, MapMetrics};

use msgnet_autograd::Tensor;

use crate::error::{Error, Result};
use crate::labels::BoxXywh;

/// Intersection over union of two boxes; 0 when the union is empty.
pub fn iou(a: &BoxXywh, b: &BoxXywh) -> Result<f64> {
    if a.w < 0.0 || a.h < 0.0 || b.w < 0.0 || b.h < 0.0 {
        return Err(Error::invalid(format!("negative box size in {a:?} / {b:?}")));
    }
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

/// Peak signal-to-noise ratio in decibels; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("psnr of {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape("psnr of empty images"));
    }
    let mse = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn iou_examples() {
        let a = BoxXywh::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BoxXywh::new(5.0, 5.0, 1.0, 1.0)).unwrap(), 0.0);
        assert!((iou(&a, &BoxXywh::new(1.0, 0.0, 2.0, 2.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(iou(&a, &BoxXywh::new(0.0, 0.0, -1.0, 1.0)).is_err());
        let z = BoxXywh::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(iou(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::zeros(IxDyn(&[3, 4, 4]));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Tensor::ones(IxDyn(&[3, 4, 4]));
        let db = psnr(&a, &b, 255.0).unwrap();
        assert!((db - 48.1308).abs() < 1e-4, "{db}");
        assert!(psnr(&a, &Tensor::zeros(IxDyn(&[3, 4, 5])), 1.0).is_err());
    }
}
