//! Score thresholding, clipping and per-class greedy NMS.

use std::cmp::Ordering;

use msgnet_autograd::{no_grad, Tensor};
use ndarray::Axis;

use super::assign::location_centers;
use super::model::Detector;
use crate::error::Result;
use crate::evalkit::iou;
use crate::labels::{BoxXywh, Category, Detection};

fn by_score(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score)
}

/// Greedy NMS within each class. Candidates are visited by descending score
/// (stable, so ties keep input order); one is kept when its IoU with every
/// kept box of the same class is at most `iou_threshold`. Returns the kept
/// indices in visiting order.
pub fn nms(candidates: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| by_score(&candidates[a], &candidates[b]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let c = &candidates[i];
        let clear = kept.iter().all(|&k| {
            let o = &candidates[k];
            o.category != c.category || iou(&o.bbox, &c.bbox).unwrap_or(0.0) <= iou_threshold
        });
        if clear {
            kept.push(i);
        }
    }
    kept
}

/// Turns head outputs of one image (`[M, C]` probabilities, `[M, 4]`
/// distances) into detections.
pub fn decode_image(
    scores: &Tensor,
    ltrb: &Tensor,
    levels: &[(usize, usize, usize)],
    image_size: (usize, usize),
    score_threshold: f64,
    nms_iou_threshold: f64,
    max_detections: usize,
) -> Vec<Detection> {
    let centers = location_centers(levels);
    let (h, w) = (image_size.0 as f64, image_size.1 as f64);
    let mut candidates = Vec::new();
    for (loc, &(cx, cy)) in centers.iter().enumerate() {
        let d = ltrb.index_axis(Axis(0), loc);
        let bbox = BoxXywh::from_corners(cx - d[0], cy - d[1], cx + d[2], cy + d[3]).clip(w, h);
        if bbox.w <= 0.0 || bbox.h <= 0.0 {
            continue;
        }
        for (k, &p) in scores.index_axis(Axis(0), loc).iter().enumerate() {
            if p > score_threshold {
                candidates.push(Detection {
                    category: Category::from_index(k).expect("class index"),
                    score: p,
                    bbox,
                });
            }
        }
    }
    let mut out: Vec<Detection> = nms(&candidates, nms_iou_threshold)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    out.sort_by(by_score);
    out.truncate(max_detections);
    out
}

/// Evaluation-mode inference on an `[N, 3, H, W]` batch.
pub fn detect_batch(model: &Detector, images: &Tensor) -> Result<Vec<Vec<Detection>>> {
    let _g = no_grad();
    let out = model.forward(images, false)?;
    let scores = out.cls.sigmoid();
    let s = images.shape();
    let cfg = &model.config;
    Ok((0..s[0])
        .map(|n| {
            decode_image(
                &scores.value().index_axis(Axis(0), n).to_owned(),
                &out.ltrb.value().index_axis(Axis(0), n).to_owned(),
                &out.levels,
                (s[2], s[3]),
                cfg.score_threshold,
                cfg.nms_iou_threshold,
                cfg.max_detections,
            )
        })
        .collect())
}

/// Inference on one `[3, H, W]` image.
pub fn detect(model: &Detector, image: &Tensor) -> Result<Vec<Detection>> {
    let batch = image.clone().insert_axis(Axis(0));
    Ok(detect_batch(model, &batch)?.pop().unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use msgnet_autograd::tensor;

    fn det(category: Category, score: f64, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection {
            category,
            score,
            bbox: BoxXywh::new(x, y, w, h),
        }
    }

    #[test]
    fn identical_boxes_leave_one() {
        let c = vec![det(Category::Buoy, 0.6, 1., 1., 5., 5.), det(Category::Buoy, 0.9, 1., 1., 5., 5.)];
        assert_eq!(nms(&c, 0.99), vec![1]);
        let other = vec![c[0], det(Category::CargoShip, 0.9, 1., 1., 5., 5.)];
        assert_eq!(nms(&other, 0.5).len(), 2);
    }

    #[test]
    fn decode_threshold_one_is_empty() {
        let levels = [(8, 1, 2)];
        let scores = tensor(&[2, 4], vec![1.0, 0.99, 0.5, 0.2, 1.0, 0.0, 0.0, 0.0]);
        let ltrb = tensor(&[2, 4], vec![2.0; 8]);
        assert!(decode_image(&scores, &ltrb, &levels, (8, 16), 1.0, 0.5, 10).is_empty());
        let d = decode_image(&scores, &ltrb, &levels, (8, 16), 0.4, 0.5, 10);
        assert_eq!(d.len(), 4);
        assert!(d.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(d[0].bbox, BoxXywh::new(2.0, 2.0, 4.0, 4.0));
        assert_eq!(decode_image(&scores, &ltrb, &levels, (8, 16), 0.4, 0.5, 2).len(), 2);
    }

    #[test]
    fn decoded_boxes_are_clipped() {
        let levels = [(8, 1, 1)];
        let scores = tensor(&[1, 4], vec![0.9, 0.0, 0.0, 0.0]);
        let ltrb = tensor(&[1, 4], vec![10.0, 1.0, 30.0, 1.0]);
        let d = decode_image(&scores, &ltrb, &levels, (8, 8), 0.5, 0.5, 10);
        assert_eq!(d[0].bbox, BoxXywh::new(0.0, 3.0, 8.0, 2.0));
    }
}
