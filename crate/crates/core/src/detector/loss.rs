use msgnet_autograd::{Tensor, Var};
use ndarray::{Axis, IxDyn};
use serde::{Deserialize, Serialize};

use super::assign::{assign_targets, Assignment};
use super::model::{Detector, HeadOutput};
use crate::datakit::BoxAnnotation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub classification_loss: f64,
    pub box_loss: f64,
    pub total: f64,
}

/// Mean `1 − IoU` between predicted and target `(l, t, r, b)` distances
/// measured from the same points. `pred` is `[P, 4]`, `target` constant `[P, 4]`.
pub fn iou_loss(pred: &Var, target: &Tensor) -> Var {
    let t = Var::constant(target.clone());
    let col = |v: &Var, k: usize| v.narrow(1, k, 1);
    let (pl, pt, pr, pb) = (col(pred, 0), col(pred, 1), col(pred, 2), col(pred, 3));
    let (tl, tt, tr, tb) = (col(&t, 0), col(&t, 1), col(&t, 2), col(&t, 3));
    let inter_w = pl.minimum(&tl).add(&pr.minimum(&tr));
    let inter_h = pt.minimum(&tt).add(&pb.minimum(&tb));
    let inter = inter_w.mul(&inter_h);
    let area_p = pl.add(&pr).mul(&pt.add(&pb));
    let area_t = tl.add(&tr).mul(&tt.add(&tb));
    let union = area_p.add(&area_t).sub(&inter).add_scalar(1e-9);
    inter.div(&union).neg().add_scalar(1.0).mean()
}

/// Total loss `BCE / max(P, 1) + λ · mean(1 − IoU)` over a batch, where the
/// classification term sums per-class binary cross-entropy over every
/// location and `P` counts positives.
pub fn compute_loss(
    out: &HeadOutput,
    batch: &[&[BoxAnnotation]],
    assign_scale: f64,
    box_loss_weight: f64,
) -> Result<(Var, LossReport)> {
    let s = out.cls.shape().to_vec();
    let (n, m, c) = (s[0], s[1], s[2]);
    if batch.len() != n {
        return Err(Error::shape(format!("{} annotation lists for a batch of {n}", batch.len())));
    }
    let assignments: Vec<Assignment> = batch
        .iter()
        .map(|objs| assign_targets(objs, &out.levels, assign_scale, c))
        .collect();
    let views: Vec<_> = assignments.iter().map(|a| a.cls_target.view()).collect();
    let cls_target = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::shape(e.to_string()))?
        .into_shape_with_order(IxDyn(&[n * m, c]))
        .map_err(|e| Error::shape(e.to_string()))?;

    let mut rows = Vec::new();
    let mut target = Vec::new();
    for (b, a) in assignments.iter().enumerate() {
        for p in &a.positives {
            rows.push(b * m + p.location);
            let (cx, cy) = p.center;
            target.extend_from_slice(&[cx - p.bbox.x, cy - p.bbox.y, p.bbox.x2() - cx, p.bbox.y2() - cy]);
        }
    }
    let npos = rows.len();
    let cls_loss = out
        .cls
        .reshape(&[n * m, c])
        .bce_with_logits(&cls_target)
        .sum()
        .scale(1.0 / npos.max(1) as f64);
    let (total, box_value) = if npos == 0 {
        (cls_loss.clone(), 0.0)
    } else {
        let pred = out.ltrb.reshape(&[n * m, 4]).select_rows(&rows);
        let target = Tensor::from_shape_vec(IxDyn(&[npos, 4]), target).expect("positive targets");
        let box_loss = iou_loss(&pred, &target);
        let v = box_loss.scalar();
        (cls_loss.add(&box_loss.scale(box_loss_weight)), v)
    };
    let report = LossReport {
        classification_loss: cls_loss.scalar(),
        box_loss: box_value,
        total: total.scalar(),
    };
    if !(report.total.is_finite() && report.classification_loss.is_finite() && report.box_loss.is_finite()) {
        return Err(Error::NonFinite("detector loss"));
    }
    Ok((total, report))
}

/// Forward pass in training mode plus the loss. Every box must lie inside
/// its image.
pub fn forward_train(model: &Detector, images: &Tensor, batch: &[&[BoxAnnotation]]) -> Result<(Var, LossReport)> {
    let s = images.shape();
    if s.first().copied().unwrap_or(0) == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let (h, w) = (s[2] as f64, s[3] as f64);
    for objs in batch {
        if let Some(o) = objs.iter().find(|o| !o.bbox.is_finite() || o.bbox.w <= 0.0 || o.bbox.h <= 0.0 || !o.bbox.within(w, h)) {
            return Err(Error::invalid(format!("box {:?} is outside the {w}x{h} image", <[f64; 4]>::from(o.bbox))));
        }
    }
    let out = model.forward(images, true)?;
    compute_loss(&out, batch, model.config.assign_scale, model.config.box_loss_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::iou;
    use crate::labels::BoxXywh;
    use msgnet_autograd::tensor;

    #[test]
    fn iou_loss_matches_box_iou() {
        // Point (10, 10); predicted box [4, 16] x [6, 12], target [7, 15] x [2, 13].
        let pred = Var::constant(tensor(&[1, 4], vec![6.0, 4.0, 6.0, 2.0]));
        let target = tensor(&[1, 4], vec![3.0, 8.0, 5.0, 3.0]);
        let expected = iou(&BoxXywh::new(4.0, 6.0, 12.0, 6.0), &BoxXywh::new(7.0, 2.0, 8.0, 11.0)).unwrap();
        assert!((iou_loss(&pred, &target).scalar() - (1.0 - expected)).abs() < 1e-8);
        let same = Var::constant(target.clone());
        assert!(iou_loss(&same, &target).scalar().abs() < 1e-8);
    }
}
