//! COCO-style mean average precision over IoU thresholds 0.50:0.05:0.95.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::iou;
use crate::datakit::ImageRecord;
use crate::error::{Error, Result};
use crate::labels::{BoxXywh, Category, Detection};

pub const IOU_THRESHOLDS: usize = 10;
pub const RECALL_POINTS: usize = 101;

pub fn iou_threshold(i: usize) -> f64 {
    (50 + 5 * i) as f64 / 100.0
}

/// Detections of one image, in the prediction dump layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image: String,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapMetrics {
    pub map_50_95: f64,
    pub map_50: f64,
    pub map_75: f64,
    /// AP averaged over IoU thresholds, for classes present in the ground truth.
    pub per_class: BTreeMap<Category, f64>,
    /// mAP at each IoU threshold.
    pub per_threshold: Vec<f64>,
}

/// Ranked `(score, is_true_positive)` pairs of one class at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub ranked: Vec<(f64, bool)>,
    pub gt_count: usize,
}

/// Greedy matching: predictions in descending score order each take the
/// highest-IoU still-unmatched ground truth box of the same image when that
/// IoU is at least `threshold`.
pub fn match_class(
    predictions: &[ImagePredictions],
    truth: &HashMap<&str, Vec<BoxXywh>>,
    category: Category,
    threshold: f64,
) -> MatchResult {
    let mut cands: Vec<(f64, usize, usize, BoxXywh)> = Vec::new();
    for (img_idx, p) in predictions.iter().enumerate() {
        for (k, d) in p.detections.iter().enumerate() {
            if d.category == category {
                cands.push((d.score, img_idx, k, d.bbox));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut ranked = Vec::with_capacity(cands.len());
    for (score, img_idx, _, bbox) in cands {
        let gts = truth.get(predictions[img_idx].image.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let flags = used.entry(img_idx).or_insert_with(|| vec![false; gts.len()]);
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if flags[g] {
                continue;
            }
            let v = iou(&bbox, gt).unwrap_or(0.0);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            flags[g] = true;
        }
        ranked.push((score, best.is_some()));
    }
    let gt_count = truth.values().map(Vec::len).sum();
    MatchResult { ranked, gt_count }
}

/// 101-point interpolated average precision of a ranked list.
pub fn average_precision(m: &MatchResult) -> f64 {
    if m.gt_count == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(m.ranked.len());
    let mut recall = Vec::with_capacity(m.ranked.len());
    for (i, &(_, hit)) in m.ranked.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / m.gt_count as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let target = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&v| v < target);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

pub fn evaluate_map(predictions: &[ImagePredictions], ground_truth: &[ImageRecord]) -> Result<MapMetrics> {
    let known: HashMap<&str, &ImageRecord> = ground_truth.iter().map(|r| (r.image.as_str(), r)).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains_key(p.image.as_str())) {
        return Err(Error::invalid(format!("predictions for unknown image `{}`", p.image)));
    }
    let present: Vec<Category> = Category::ALL
        .into_iter()
        .filter(|c| ground_truth.iter().any(|r| r.objects.iter().any(|o| o.category == *c)))
        .collect();

    let mut per_class = BTreeMap::new();
    let mut per_threshold = vec![0.0; IOU_THRESHOLDS];
    for &c in &present {
        let truth: HashMap<&str, Vec<BoxXywh>> = ground_truth
            .iter()
            .map(|r| {
                let boxes = r.objects.iter().filter(|o| o.category == c).map(|o| o.bbox).collect();
                (r.image.as_str(), boxes)
            })
            .collect();
        let mut total = 0.0;
        for (t, slot) in per_threshold.iter_mut().enumerate() {
            let ap = average_precision(&match_class(predictions, &truth, c, iou_threshold(t)));
            *slot += ap / present.len() as f64;
            total += ap;
        }
        per_class.insert(c, total / IOU_THRESHOLDS as f64);
    }
    let map_50_95 = if present.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / present.len() as f64
    };
    Ok(MapMetrics {
        map_50_95,
        map_50: per_threshold[0],
        map_75: per_threshold[5],
        per_class,
        per_threshold,
    })
}

pub fn parse_predictions_str(text: &str) -> Result<Vec<ImagePredictions>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<ImagePredictions>> {
    parse_predictions_str(&fs::read_to_string(path)?)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[ImagePredictions]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Ground truth turned into predictions with score 1.
pub fn perfect_predictions(records: &[ImageRecord]) -> Vec<ImagePredictions> {
    records
        .iter()
        .map(|r| ImagePredictions {
            image: r.image.clone(),
            detections: r
                .objects
                .iter()
                .map(|o| Detection {
                    category: o.category,
                    score: 1.0,
                    bbox: o.bbox,
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::BoxAnnotation;
    use crate::labels::SceneClass;

    fn record(name: &str, objs: &[(Category, BoxXywh)]) -> ImageRecord {
        ImageRecord {
            image: name.into(),
            width: 100,
            height: 100,
            scene: SceneClass::Sunny,
            objects: objs.iter().map(|&(category, bbox)| BoxAnnotation { category, bbox }).collect(),
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gt = vec![
            record("a", &[(Category::Buoy, BoxXywh::new(1.0, 1.0, 5.0, 5.0))]),
            record("b", &[(Category::CargoShip, BoxXywh::new(10.0, 10.0, 40.0, 10.0))]),
        ];
        let m = evaluate_map(&perfect_predictions(&gt), &gt).unwrap();
        assert_eq!(m.map_50_95, 1.0);
        assert_eq!(m.per_class.len(), 2);
        let m = evaluate_map(&[], &gt).unwrap();
        assert_eq!(m.map_50_95, 0.0);
    }

    #[test]
    fn unknown_image_is_rejected() {
        let gt = vec![record("a", &[])];
        let preds = vec![ImagePredictions {
            image: "zzz".into(),
            detections: vec![],
        }];
        assert!(evaluate_map(&preds, &gt).is_err());
    }

    #[test]
    fn unknown_category_in_dump() {
        let line = r#"{"image":"a","detections":[{"category":"yacht","score":0.5,"bbox_xywh":[0,0,1,1]}]}"#;
        let e = parse_predictions_str(line).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        assert!(e.to_string().contains("yacht"));
    }

    #[test]
    fn half_recall_ap() {
        // One hit out of two GT boxes: precision 1 up to recall 0.5.
        let m = MatchResult {
            ranked: vec![(0.9, true)],
            gt_count: 2,
        };
        assert!((average_precision(&m) - 51.0 / 101.0).abs() < 1e-15);
    }
}
