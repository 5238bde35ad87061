//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use msgnet::datakit::{BoxAnnotation, ImageRecord};
use msgnet::evalkit::ImagePredictions;
use msgnet::labels::{BoxXywh, Category, Detection, SceneClass};
use msgnet::pld::PldConv;
use msgnet_autograd::gradcheck::numeric_gradient;
use msgnet_autograd::nn::uniform_tensor;
use msgnet_autograd::{conv2d, Conv2dSpec, Param, Tensor, Var};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn record(image: &str, w: u32, h: u32, scene: SceneClass, objects: &[(Category, [f64; 4])]) -> ImageRecord {
    ImageRecord {
        image: image.into(),
        width: w,
        height: h,
        scene,
        objects: objects
            .iter()
            .map(|&(category, b)| BoxAnnotation {
                category,
                bbox: b.into(),
            })
            .collect(),
    }
}

/// Two 320x320 images: a cargo ship (100x30) and a buoy (20x10) in a sunny
/// one, a cargo ship (50x15) in a foggy one.
pub fn three_box() -> Vec<ImageRecord> {
    vec![
        record(
            "a.png",
            320,
            320,
            SceneClass::Sunny,
            &[(Category::CargoShip, [0.0, 0.0, 100.0, 30.0]), (Category::Buoy, [0.0, 0.0, 20.0, 10.0])],
        ),
        record("b.png", 320, 320, SceneClass::Foggy, &[(Category::CargoShip, [0.0, 0.0, 50.0, 15.0])]),
    ]
}

fn det(category: Category, score: f64, b: [f64; 4]) -> Detection {
    Detection {
        category,
        score,
        bbox: b.into(),
    }
}

/// Five images with misses, duplicates, false positives, loose boxes and
/// a prediction-free image.
pub fn map_fixture() -> (Vec<ImagePredictions>, Vec<ImageRecord>) {
    use Category::*;
    let gt = vec![
        record("0.png", 200, 100, SceneClass::Sunny, &[(CargoShip, [10.0, 10.0, 60.0, 20.0]), (Buoy, [120.0, 40.0, 10.0, 10.0])]),
        record("1.png", 200, 100, SceneClass::Foggy, &[(CargoShip, [0.0, 50.0, 80.0, 30.0]), (PassengerShip, [100.0, 10.0, 50.0, 25.0])]),
        record("2.png", 200, 100, SceneClass::Rainy, &[(Buoy, [30.0, 30.0, 8.0, 8.0]), (Buoy, [60.0, 60.0, 12.0, 12.0])]),
        record("3.png", 200, 100, SceneClass::Cloudy, &[(PassengerShip, [20.0, 20.0, 40.0, 20.0])]),
        record("4.png", 200, 100, SceneClass::Light, &[(CargoShip, [150.0, 60.0, 40.0, 30.0])]),
    ];
    let preds = vec![
        ImagePredictions {
            image: "0.png".into(),
            detections: vec![
                det(CargoShip, 0.95, [11.0, 10.0, 60.0, 20.0]),
                det(CargoShip, 0.60, [10.0, 12.0, 58.0, 19.0]),
                det(Buoy, 0.40, [121.0, 41.0, 10.0, 10.0]),
            ],
        },
        ImagePredictions {
            image: "1.png".into(),
            detections: vec![
                det(CargoShip, 0.90, [4.0, 52.0, 76.0, 28.0]),
                det(PassengerShip, 0.85, [110.0, 12.0, 45.0, 22.0]),
                det(Buoy, 0.70, [5.0, 5.0, 9.0, 9.0]),
            ],
        },
        ImagePredictions {
            image: "2.png".into(),
            detections: vec![
                det(Buoy, 0.80, [31.0, 30.0, 8.0, 8.0]),
                det(Buoy, 0.50, [64.0, 63.0, 12.0, 12.0]),
                det(CargoShip, 0.30, [0.0, 0.0, 30.0, 10.0]),
            ],
        },
        ImagePredictions {
            image: "3.png".into(),
            detections: vec![det(PassengerShip, 0.65, [22.0, 21.0, 36.0, 20.0])],
        },
    ];
    (preds, gt)
}

fn box_iou(a: &BoxXywh, b: &BoxXywh) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Straightforward precision/recall evaluator: greedy matching by score,
/// then for each of the 101 recall points the best precision at any rank
/// reaching that recall. Returns `(map_50_95, per-threshold mAP)`.
pub fn brute_force_map(preds: &[ImagePredictions], gt: &[ImageRecord]) -> (f64, Vec<f64>) {
    let classes: Vec<Category> = Category::ALL
        .into_iter()
        .filter(|c| gt.iter().any(|r| r.objects.iter().any(|o| o.category == *c)))
        .collect();
    if classes.is_empty() {
        return (0.0, vec![0.0; 10]);
    }
    let mut per_threshold = vec![0.0; 10];
    let mut per_class = Vec::new();
    for &c in &classes {
        let mut class_total = 0.0;
        for (t, slot) in per_threshold.iter_mut().enumerate() {
            let thr = (50 + 5 * t) as f64 / 100.0;
            let mut dets: Vec<(f64, usize, usize, BoxXywh)> = Vec::new();
            for (pi, p) in preds.iter().enumerate() {
                for (k, d) in p.detections.iter().enumerate() {
                    if d.category == c {
                        dets.push((d.score, pi, k, d.bbox));
                    }
                }
            }
            dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let total_gt: usize = gt.iter().map(|r| r.objects.iter().filter(|o| o.category == c).count()).sum();
            let mut taken: Vec<Vec<bool>> = gt.iter().map(|r| vec![false; r.objects.len()]).collect();
            let mut hits = Vec::new();
            for (_, pi, _, b) in &dets {
                let gi = gt.iter().position(|r| r.image == preds[*pi].image).unwrap();
                let mut best: Option<(usize, f64)> = None;
                for (oi, o) in gt[gi].objects.iter().enumerate() {
                    if o.category != c || taken[gi][oi] {
                        continue;
                    }
                    let v = box_iou(b, &o.bbox);
                    if v >= thr && best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((oi, v));
                    }
                }
                if let Some((oi, _)) = best {
                    taken[gi][oi] = true;
                }
                hits.push(best.is_some());
            }
            let mut pr = Vec::new();
            let mut tp = 0;
            for (i, h) in hits.iter().enumerate() {
                tp += *h as usize;
                pr.push((tp as f64 / (i + 1) as f64, tp as f64 / total_gt as f64));
            }
            let mut sum = 0.0;
            for r in 0..101 {
                let target = r as f64 / 100.0;
                sum += pr.iter().filter(|(_, rec)| *rec >= target).map(|(p, _)| *p).fold(0.0, f64::max);
            }
            let ap = sum / 101.0;
            *slot += ap / classes.len() as f64;
            class_total += ap;
        }
        per_class.push(class_total / 10.0);
    }
    (per_class.iter().sum::<f64>() / classes.len() as f64, per_threshold)
}

/// Rigid reference for a PLD-Conv block whose offsets are all zero: the
/// horizontal branch is evaluated tap by tap on the dilated lattice, then
/// combined with the vertical branch and the 1x1 mix.
pub fn rigid_pld_reference(block: &PldConv, x: &Tensor) -> Tensor {
    let cfg = &block.config;
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = cfg.out_channels;
    let wx = block.weight_x.value();
    let bx = block.bias_x.value();
    let half = (cfg.kernel_x as isize - 1) / 2;
    let mut fx = Tensor::zeros(IxDyn(&[n, o, h, w]));
    for b in 0..n {
        for oc in 0..o {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = bx[[oc]];
                    for ic in 0..c {
                        for t in 0..cfg.kernel_x {
                            let jj = j as isize + (t as isize - half) * cfg.dilation_x as isize;
                            if (0..w as isize).contains(&jj) {
                                acc += wx[[oc, ic, 0, t]] * x[[b, ic, i, jj as usize]];
                            }
                        }
                    }
                    fx[[b, oc, i, j]] = acc;
                }
            }
        }
    }
    let xv = Var::constant(x.clone());
    let vertical = Conv2dSpec {
        padding: ((cfg.kernel_y - 1) / 2, 0),
        ..Default::default()
    };
    let cy = &block.conv_y;
    let fy = conv2d(&xv, &cy.weight.var(), cy.bias.as_ref().map(Param::var).as_ref(), vertical);
    let f = &block.fuse;
    let mixed = conv2d(
        &Var::concat(&[Var::constant(fx), fy], 1),
        &f.weight.var(),
        f.bias.as_ref().map(Param::var).as_ref(),
        Conv2dSpec::default(),
    );
    mixed.value().clone()
}

pub fn random_tensor(shape: &[usize], bound: f64, seed: u64) -> Tensor {
    uniform_tensor(shape, bound, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Weighted sum so every output element receives a distinct upstream gradient.
pub fn probe(v: &Var, seed: u64) -> Var {
    v.mul(&Var::constant(random_tensor(v.shape(), 1.0, seed))).sum()
}

/// Relative error between analytic and central-difference gradients over
/// all of `params` taken together: worst absolute difference over the
/// largest gradient entry. Parameters whose true gradient vanishes (biases
/// ahead of a batch norm) are then judged against the block's gradient
/// scale rather than against their own rounding noise.
pub fn max_gradient_error(params: &[&Param], h: f64, loss: impl Fn() -> Var) -> f64 {
    let grads = loss().backward();
    let (mut diff, mut scale) = (0.0f64, 1e-12f64);
    for p in params {
        let analytic = grads.param(p).cloned().unwrap_or_else(|| Tensor::zeros(IxDyn(&p.shape())));
        let numeric = numeric_gradient(p, h, || loss().scalar());
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            diff = diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
        }
    }
    diff / scale
}
