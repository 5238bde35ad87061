//! Offset limits derived from the aspect-ratio distribution of the boxes.

use super::annotations::ImageRecord;
use crate::error::{Error, Result};
use crate::geom::OffsetLimits;

/// Lower of the two middle values for even counts. Input must be sorted.
pub fn lower_median(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        None
    } else {
        Some(sorted[(sorted.len() - 1) / 2])
    }
}

/// `r_x = round(median w/h)` clamped to `[1, 8]`, `r_y = 1`, `r = max(r_x, r_y)`.
pub fn compute_offset_limits(records: &[ImageRecord]) -> Result<OffsetLimits> {
    let mut ratios: Vec<f64> = records
        .iter()
        .flat_map(|r| r.objects.iter().map(|o| o.bbox.aspect_ratio()))
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = lower_median(&ratios).ok_or_else(|| Error::invalid("no annotations to derive offset limits from"))?;
    let r_x = median.round().clamp(1.0, 8.0);
    OffsetLimits::per_axis(r_x, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::annotations::BoxAnnotation;
    use crate::labels::{BoxXywh, Category, SceneClass};

    fn record(boxes: &[(f64, f64)]) -> ImageRecord {
        ImageRecord {
            image: "x.png".into(),
            width: 640,
            height: 640,
            scene: SceneClass::Sunny,
            objects: boxes
                .iter()
                .map(|&(w, h)| BoxAnnotation {
                    category: Category::CargoShip,
                    bbox: BoxXywh::new(0.0, 0.0, w, h),
                })
                .collect(),
        }
    }

    #[test]
    fn fixture_ratios_give_three() {
        let l = compute_offset_limits(&[record(&[(100.0, 30.0), (20.0, 10.0), (50.0, 15.0)])]).unwrap();
        assert_eq!((l.r_x(), l.r_y(), l.r()), (3.0, 1.0, 3.0));
    }

    #[test]
    fn singleton_and_square_cases() {
        assert_eq!(compute_offset_limits(&[record(&[(40.0, 10.0)])]).unwrap().r_x(), 4.0);
        assert_eq!(compute_offset_limits(&[record(&[(5.0, 5.0), (9.0, 9.0)])]).unwrap().r_x(), 1.0);
        assert_eq!(compute_offset_limits(&[record(&[(500.0, 5.0)])]).unwrap().r_x(), 8.0);
        assert_eq!(compute_offset_limits(&[record(&[(1.0, 5.0)])]).unwrap().r_x(), 1.0);
    }

    #[test]
    fn even_count_takes_lower_middle() {
        assert_eq!(lower_median(&[1.0, 2.0, 6.0, 7.0]), Some(2.0));
        let l = compute_offset_limits(&[record(&[(10.0, 10.0), (20.0, 10.0), (60.0, 10.0), (70.0, 10.0)])]).unwrap();
        assert_eq!(l.r_x(), 2.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(compute_offset_limits(&[]).is_err());
        assert!(compute_offset_limits(&[record(&[])]).is_err());
    }
}
