mod common;

use std::collections::BTreeSet;

use msgnet::datakit::split::apportion;
use msgnet::datakit::{compute_stats_report, split_dataset, BoxAnnotation, ImageRecord};
use msgnet::detector::{assign_targets, level_for_box, location_centers, nms};
use msgnet::evalkit::{evaluate_map, iou, map::perfect_predictions};
use msgnet::geom::{clamp_offsets, OffsetLimits};
use msgnet::labels::{BoxXywh, Category, Detection, SceneClass};
use msgnet_autograd::{tensor, Var};
use proptest::prelude::*;

fn arb_box(max: f64) -> impl Strategy<Value = BoxXywh> {
    (0.0..max, 0.0..max, 1.0..max / 2.0, 1.0..max / 2.0).prop_map(|(x, y, w, h)| BoxXywh::new(x, y, w, h))
}

fn arb_category() -> impl Strategy<Value = Category> {
    (0usize..4).prop_map(|i| Category::from_index(i).unwrap())
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    // Few distinct scores so ties are common.
    (arb_category(), 0u8..6, arb_box(100.0)).prop_map(|(category, s, bbox)| Detection {
        category,
        score: 0.1 + s as f64 * 0.15,
        bbox,
    })
}

fn arb_records(max_images: usize) -> impl Strategy<Value = Vec<ImageRecord>> {
    prop::collection::vec(
        (
            0usize..6,
            prop::collection::vec((arb_category(), arb_box(200.0)), 0..5),
        ),
        1..max_images,
    )
    .prop_map(|imgs| {
        imgs.into_iter()
            .enumerate()
            .map(|(i, (scene, objs))| ImageRecord {
                image: format!("{i}.png"),
                width: 300,
                height: 300,
                scene: SceneClass::from_index(scene).unwrap(),
                objects: objs.into_iter().map(|(category, bbox)| BoxAnnotation { category, bbox }).collect(),
            })
            .collect()
    })
}

/// Visiting precedence of NMS: higher score first, then input order.
fn precedes(dets: &[Detection], a: usize, b: usize) -> bool {
    dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // The greedy result is the unique set in which kept boxes never overlap
    // above the threshold within a class and every dropped box overlaps a
    // kept box of its class that precedes it.
    #[test]
    fn nms_matches_its_characterisation(
        dets in prop::collection::vec(arb_detection(), 0..=50),
        thr in 0.05f64..0.95,
    ) {
        let kept = nms(&dets, thr);
        let set: BTreeSet<usize> = kept.iter().copied().collect();
        prop_assert_eq!(set.len(), kept.len());
        for w in kept.windows(2) {
            prop_assert!(precedes(&dets, w[0], w[1]));
        }
        let overlap = |a: usize, b: usize| {
            dets[a].category == dets[b].category && iou(&dets[a].bbox, &dets[b].bbox).unwrap() > thr
        };
        for &a in &kept {
            for &b in &kept {
                prop_assert!(a == b || !overlap(a, b));
            }
        }
        for i in (0..dets.len()).filter(|i| !set.contains(i)) {
            prop_assert!(kept.iter().any(|&k| precedes(&dets, k, i) && overlap(k, i)), "{i} dropped without cause");
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(50.0), b in arb_box(50.0)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_invariants(
        boxes in prop::collection::vec((arb_category(), arb_box(64.0)), 0..8),
        scale in prop::sample::select(vec![2.0, 4.0, 8.0]),
    ) {
        let levels = [(8, 8, 8), (16, 4, 4), (32, 2, 2)];
        let strides = [8, 16, 32];
        let objects: Vec<BoxAnnotation> = boxes.into_iter().map(|(category, bbox)| BoxAnnotation { category, bbox }).collect();
        let a = assign_targets(&objects, &levels, scale, 4);
        let centers = location_centers(&levels);
        let level_of = |loc: usize| if loc < 64 { 0 } else if loc < 80 { 1 } else { 2 };

        let mut positive = vec![None; centers.len()];
        for p in &a.positives {
            prop_assert!(positive[p.location].is_none(), "location {} assigned twice", p.location);
            positive[p.location] = Some(p);
        }
        for w in a.positives.windows(2) {
            prop_assert!(w[0].location < w[1].location);
        }
        for (loc, &(cx, cy)) in centers.iter().enumerate() {
            // Boxes that may claim this location.
            let claims: Vec<&BoxAnnotation> = objects
                .iter()
                .filter(|o| level_for_box(&o.bbox, &strides, scale) == level_of(loc))
                .filter(|o| cx > o.bbox.x && cx < o.bbox.x2() && cy > o.bbox.y && cy < o.bbox.y2())
                .collect();
            let row: Vec<f64> = (0..4).map(|c| a.cls_target[[loc, c]]).collect();
            match positive[loc] {
                None => {
                    prop_assert!(claims.is_empty());
                    prop_assert!(row.iter().all(|&v| v == 0.0));
                }
                Some(p) => {
                    let min_area = claims.iter().map(|o| o.bbox.area()).fold(f64::INFINITY, f64::min);
                    prop_assert!(claims.iter().any(|o| o.bbox == p.bbox && o.category.index() == p.category));
                    prop_assert_eq!(p.bbox.area(), min_area);
                    prop_assert_eq!(p.center, (cx, cy));
                    prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                    prop_assert_eq!(row[p.category], 1.0);
                }
            }
        }
    }

    #[test]
    fn clamped_offsets_respect_limits(
        raw in prop::collection::vec(-1e3f64..1e3, 2 * 3 * 2 * 2),
        r_x in 0.5f64..6.0,
        r_y in 0.5f64..6.0,
    ) {
        let limits = OffsetLimits::per_axis(r_x, r_y).unwrap();
        let field = clamp_offsets(&Var::constant(tensor(&[2, 3, 2, 2, 1], raw.clone())), limits).unwrap();
        let v = field.values.value();
        for (k, (&out, &inp)) in v.iter().zip(raw.iter()).enumerate() {
            // Layout [N, K, 2, H, W] with H = 2, W = 1: the axis flips every two entries.
            let bound = if (k / 2) % 2 == 0 { r_x } else { r_y };
            prop_assert!(out.abs() <= bound);
            prop_assert!(out == 0.0 || out.signum() == inp.signum());
            prop_assert!(out.abs() <= limits.r());
        }
    }

    #[test]
    fn stats_merge_is_partition_invariant(records in arb_records(12), cut in 0usize..12) {
        let cut = cut.min(records.len());
        let (a, b) = records.split_at(cut);
        let merged = compute_stats_report(a).merge(&compute_stats_report(b));
        prop_assert_eq!(merged, compute_stats_report(&records));
    }

    #[test]
    fn split_is_a_stratified_partition(records in arb_records(40), seed in any::<u64>()) {
        let ratios = [0.7, 0.2, 0.1];
        let (train, val, test) = split_dataset(&records, ratios, seed).unwrap();
        let sizes = apportion(records.len(), ratios);
        prop_assert_eq!([train.len(), val.len(), test.len()], sizes);
        let mut names: Vec<&str> = train.iter().chain(&val).chain(&test).map(|r| r.image.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        prop_assert_eq!(names.len(), records.len());
        let n = records.len() as f64;
        for scene in SceneClass::ALL {
            let total = records.iter().filter(|r| r.scene == scene).count() as f64;
            for (part, size) in [&train, &val, &test].iter().zip(sizes) {
                let got = part.iter().filter(|r| r.scene == scene).count() as f64;
                // Within two of the proportional share of the realised split size.
                prop_assert!((got - total * size as f64 / n).abs() <= 2.0, "{scene:?}: {got} of {total}");
            }
        }
    }

    #[test]
    fn evaluator_matches_the_brute_force_oracle(
        records in arb_records(5),
        noise in prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0, 0.0f64..1.0, any::<bool>()), 40),
    ) {
        // Perturbed copies of the ground truth, some dropped, some relabelled.
        let mut preds = perfect_predictions(&records);
        let mut it = noise.iter().cycle();
        for p in &mut preds {
            p.detections.retain_mut(|d| {
                let &(dx, dy, s, keep) = it.next().unwrap();
                d.bbox = BoxXywh::new(d.bbox.x + dx, d.bbox.y + dy, d.bbox.w, d.bbox.h);
                d.score = s;
                if !keep && s < 0.3 {
                    d.category = Category::from_index((d.category.index() + 1) % 4).unwrap();
                }
                keep || s > 0.5
            });
        }
        let m = evaluate_map(&preds, &records).unwrap();
        let (oracle, per_threshold) = common::brute_force_map(&preds, &records);
        prop_assert!((m.map_50_95 - oracle).abs() < 1e-12, "{} vs {oracle}", m.map_50_95);
        for (a, b) in m.per_threshold.iter().zip(&per_threshold) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
