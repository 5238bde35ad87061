//! Centre-based positive assignment.
//!
//! Each ground-truth box is routed to one pyramid level: the first stride
//! whose `stride · assign_scale` covers the box's longer side, or the last
//! level. On that level every location whose cell centre lies strictly inside
//! the box is a positive. A location claimed by several boxes goes to the one
//! with the smaller area, then the lower category index, then the
//! lexicographically smaller `(x, y, w, h)`.
//!
//! A box too small to contain any cell centre of its level gets no
//! positives; it still counts as a miss in evaluation.

use std::cmp::Ordering;

use msgnet_autograd::Tensor;
use ndarray::IxDyn;

use crate::datakit::BoxAnnotation;
use crate::labels::BoxXywh;

/// One positive location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Positive {
    /// Row in the flattened location axis.
    pub location: usize,
    pub center: (f64, f64),
    pub category: usize,
    pub bbox: BoxXywh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `[M, num_classes]` one-hot classification targets.
    pub cls_target: Tensor,
    /// Sorted by location.
    pub positives: Vec<Positive>,
}

/// Cell centre of every location, level-major then row-major, matching the
/// head's flattened output.
pub fn location_centers(levels: &[(usize, usize, usize)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(s, rows, cols) in levels {
        for i in 0..rows {
            for j in 0..cols {
                out.push(((j as f64 + 0.5) * s as f64, (i as f64 + 0.5) * s as f64));
            }
        }
    }
    out
}

/// Level index for a box.
pub fn level_for_box(bbox: &BoxXywh, strides: &[usize], assign_scale: f64) -> usize {
    let side = bbox.w.max(bbox.h);
    strides
        .iter()
        .position(|&s| side <= s as f64 * assign_scale)
        .unwrap_or(strides.len() - 1)
}

fn precedence(a: &BoxAnnotation, b: &BoxAnnotation) -> Ordering {
    let key = |o: &BoxAnnotation| [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h];
    a.bbox
        .area()
        .total_cmp(&b.bbox.area())
        .then(a.category.index().cmp(&b.category.index()))
        .then_with(|| {
            key(a)
                .iter()
                .zip(key(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

pub fn assign_targets(
    objects: &[BoxAnnotation],
    levels: &[(usize, usize, usize)],
    assign_scale: f64,
    num_classes: usize,
) -> Assignment {
    let centers = location_centers(levels);
    let strides: Vec<usize> = levels.iter().map(|l| l.0).collect();
    let mut level_start = Vec::with_capacity(levels.len());
    let mut acc = 0;
    for &(_, r, c) in levels {
        level_start.push(acc);
        acc += r * c;
    }

    let mut owner: Vec<Option<usize>> = vec![None; centers.len()];
    for (k, obj) in objects.iter().enumerate() {
        let l = level_for_box(&obj.bbox, &strides, assign_scale);
        let (s, rows, cols) = levels[l];
        let s = s as f64;
        // Only scan the cells whose centres can fall inside the box.
        let j0 = ((obj.bbox.x / s - 0.5).floor().max(0.0)) as usize;
        let j1 = ((obj.bbox.x2() / s - 0.5).ceil().max(0.0) as usize).min(cols.saturating_sub(1));
        let i0 = ((obj.bbox.y / s - 0.5).floor().max(0.0)) as usize;
        let i1 = ((obj.bbox.y2() / s - 0.5).ceil().max(0.0) as usize).min(rows.saturating_sub(1));
        for i in i0..=i1.min(rows.saturating_sub(1)) {
            for j in j0..=j1 {
                if j >= cols {
                    continue;
                }
                let loc = level_start[l] + i * cols + j;
                let (cx, cy) = centers[loc];
                if !obj.bbox.contains_point(cx, cy) {
                    continue;
                }
                let wins = match owner[loc] {
                    None => true,
                    Some(prev) => precedence(obj, &objects[prev]).is_lt(),
                };
                if wins {
                    owner[loc] = Some(k);
                }
            }
        }
    }

    let mut cls_target = Tensor::zeros(IxDyn(&[centers.len(), num_classes]));
    let mut positives = Vec::new();
    for (loc, o) in owner.iter().enumerate() {
        if let Some(k) = *o {
            let obj = &objects[k];
            cls_target[[loc, obj.category.index()]] = 1.0;
            positives.push(Positive {
                location: loc,
                center: centers[loc],
                category: obj.category.index(),
                bbox: obj.bbox,
            });
        }
    }
    Assignment { cls_target, positives }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Category;

    const LEVELS: [(usize, usize, usize); 3] = [(8, 8, 8), (16, 4, 4), (32, 2, 2)];

    fn obj(category: Category, x: f64, y: f64, w: f64, h: f64) -> BoxAnnotation {
        BoxAnnotation {
            category,
            bbox: BoxXywh::new(x, y, w, h),
        }
    }

    /// Brute force over every location and every box.
    fn oracle(objects: &[BoxAnnotation]) -> Vec<(usize, usize)> {
        let strides = [8, 16, 32];
        let centers = location_centers(&LEVELS);
        let mut out = Vec::new();
        for (loc, &(cx, cy)) in centers.iter().enumerate() {
            let level = if loc < 64 { 0 } else if loc < 80 { 1 } else { 2 };
            let mut best: Option<&BoxAnnotation> = None;
            for o in objects {
                if level_for_box(&o.bbox, &strides, 8.0) != level || !o.bbox.contains_point(cx, cy) {
                    continue;
                }
                if best.map_or(true, |b| precedence(o, b).is_lt()) {
                    best = Some(o);
                }
            }
            if let Some(b) = best {
                out.push((loc, b.category.index()));
            }
        }
        out
    }

    #[test]
    fn hand_built_two_box_instance() {
        // Overlap: the small buoy wins the shared cells.
        let objects = vec![
            obj(Category::CargoShip, 4.0, 4.0, 30.0, 20.0),
            obj(Category::Buoy, 18.0, 10.0, 12.0, 12.0),
        ];
        let a = assign_targets(&objects, &LEVELS, 8.0, 4);
        let got: Vec<(usize, usize)> = a.positives.iter().map(|p| (p.location, p.category)).collect();
        // Cargo centres: x in {12, 20, 28}, y in {12, 20}; buoy: x in {20, 28}, y in {12, 20}.
        assert_eq!(got, vec![(9, 0), (10, 2), (11, 2), (17, 0), (18, 2), (19, 2)]);
        assert_eq!(got, oracle(&objects));
        for p in &a.positives {
            assert!(p.bbox.contains_point(p.center.0, p.center.1));
        }
        assert_eq!(a.cls_target.sum(), 6.0);
    }

    #[test]
    fn duplicates_do_not_change_assignment() {
        let objects = vec![
            obj(Category::CargoShip, 4.0, 4.0, 30.0, 20.0),
            obj(Category::Buoy, 18.0, 10.0, 12.0, 12.0),
        ];
        let mut doubled = objects.clone();
        doubled.extend(objects.iter().rev().copied());
        assert_eq!(assign_targets(&objects, &LEVELS, 8.0, 4), assign_targets(&doubled, &LEVELS, 8.0, 4));
    }

    #[test]
    fn equal_areas_break_ties_by_category_then_position() {
        let objects = vec![
            obj(Category::ContainerShip, 0.0, 0.0, 20.0, 20.0),
            obj(Category::PassengerShip, 2.0, 2.0, 20.0, 20.0),
            obj(Category::PassengerShip, 1.0, 1.0, 20.0, 20.0),
        ];
        let a = assign_targets(&objects, &LEVELS, 8.0, 4);
        assert!(a.positives.iter().all(|p| p.category == 1));
        let shared = a.positives.iter().find(|p| p.location == 9).unwrap();
        assert_eq!(shared.bbox.x, 1.0);
        let got: Vec<_> = a.positives.iter().map(|p| (p.location, p.category)).collect();
        assert_eq!(got, oracle(&objects));
    }

    #[test]
    fn large_boxes_go_to_coarse_levels() {
        let objects = vec![obj(Category::CargoShip, 0.0, 0.0, 64.0, 40.0), obj(Category::Buoy, 0.0, 0.0, 100.0, 30.0)];
        assert_eq!(level_for_box(&objects[0].bbox, &[8, 16, 32], 8.0), 0);
        assert_eq!(level_for_box(&objects[1].bbox, &[8, 16, 32], 8.0), 1);
        assert_eq!(level_for_box(&BoxXywh::new(0., 0., 900., 9.), &[8, 16, 32], 8.0), 2);
    }

    #[test]
    fn no_objects_means_all_background() {
        let a = assign_targets(&[], &LEVELS, 8.0, 4);
        assert!(a.positives.is_empty());
        assert_eq!(a.cls_target.shape(), &[84, 4]);
        assert_eq!(a.cls_target.sum(), 0.0);
    }
}
