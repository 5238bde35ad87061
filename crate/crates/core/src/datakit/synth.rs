//! Procedural water-surface scenes with vessel-like objects, for fixtures
//! and desk-scale training.
//!
//! The sunny and cloudy classes differ in their sky and water palettes; the
//! four adverse classes are a clean base scene passed through
//! [`apply_degradation`] with randomised parameters.

use msgnet_autograd::Tensor;
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::annotations::{BoxAnnotation, ImageRecord};
use super::degrade::{apply_degradation, Degradation, DegradationSpec, FogParams, LowlightParams, RainParams};
use crate::error::Result;
use crate::labels::{BoxXywh, Category, SceneClass};

/// Fraction of the image height occupied by sky.
const HORIZON: f64 = 0.35;

type Rgb = [f64; 3];

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    std::array::from_fn(|c| a[c] + (b[c] - a[c]) * t)
}

fn fill(img: &mut Tensor, x0: usize, y0: usize, x1: usize, y1: usize, color: Rgb) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    for y in y0..y1.min(h) {
        for x in x0..x1.min(w) {
            for (c, &v) in color.iter().enumerate() {
                img[[c, y, x]] = v;
            }
        }
    }
}

/// Clean background: sky gradient above the horizon, rippled water below.
fn background<R: Rng>(width: usize, height: usize, cloudy: bool, rng: &mut R) -> Tensor {
    let (sky_top, sky_low, water_far, water_near) = if cloudy {
        ([0.55, 0.57, 0.6], [0.72, 0.73, 0.75], [0.42, 0.45, 0.47], [0.3, 0.33, 0.35])
    } else {
        ([0.25, 0.5, 0.9], [0.62, 0.8, 0.98], [0.2, 0.45, 0.6], [0.06, 0.28, 0.45])
    };
    let horizon = (HORIZON * height as f64).round() as usize;
    let mut img = Tensor::zeros(IxDyn(&[3, height, width]));
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    for y in 0..height {
        let color = if y < horizon {
            lerp(sky_top, sky_low, y as f64 / horizon.max(1) as f64)
        } else {
            lerp(water_far, water_near, (y - horizon) as f64 / (height - horizon).max(1) as f64)
        };
        for x in 0..width {
            let ripple = if y >= horizon {
                0.03 * ((x as f64 * 0.7 + y as f64 * 1.3 + phase).sin())
            } else {
                0.0
            };
            for c in 0..3 {
                img[[c, y, x]] = color[c] + ripple;
            }
        }
    }
    if cloudy {
        for _ in 0..3 {
            let cx = rng.random::<f64>() * width as f64;
            let cy = rng.random::<f64>() * horizon as f64;
            let r = 0.15 * width as f64;
            for y in 0..horizon {
                for x in 0..width {
                    let d = ((x as f64 - cx).powi(2) / 4.0 + (y as f64 - cy).powi(2)).sqrt();
                    if d < r {
                        for c in 0..3 {
                            img[[c, y, x]] += 0.1 * (1.0 - d / r);
                        }
                    }
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Paints one object so that its visible extent is exactly `bbox`.
fn draw_object(img: &mut Tensor, obj: &BoxAnnotation) {
    let b = obj.bbox;
    let (x0, y0) = (b.x.round() as usize, b.y.round() as usize);
    let (x1, y1) = (b.x2().round() as usize, b.y2().round() as usize);
    let (w, h) = (x1 - x0, y1 - y0);
    match obj.category {
        Category::CargoShip => {
            let deck = y0 + h * 2 / 5;
            fill(img, x0, deck, x1, y1, [0.5, 0.12, 0.08]);
            fill(img, x0 + w * 3 / 4, y0, x1, deck, [0.92, 0.9, 0.85]);
            fill(img, x0, y1 - (h / 5).max(1), x1, y1, [0.15, 0.1, 0.08]);
        }
        Category::PassengerShip => {
            fill(img, x0, y0, x1, y1, [0.95, 0.95, 0.95]);
            let band = y0 + h / 3;
            fill(img, x0 + 1, band, x1.saturating_sub(1), band + (h / 5).max(1), [0.1, 0.25, 0.7]);
        }
        Category::ContainerShip => {
            let deck = y0 + h / 2;
            fill(img, x0, deck, x1, y1, [0.08, 0.12, 0.35]);
            let palette = [[0.85, 0.2, 0.15], [0.15, 0.6, 0.2], [0.9, 0.75, 0.1]];
            let step = (w / 5).max(1);
            for (i, x) in (x0..x1).step_by(step).enumerate() {
                fill(img, x, y0, (x + step).min(x1), deck, palette[i % 3]);
            }
        }
        Category::Buoy => {
            fill(img, x0, y0, x1, y1, [0.95, 0.4, 0.05]);
            fill(img, x0, y0, x1, y0 + (h / 3).max(1), [0.98, 0.95, 0.9]);
        }
    }
}

/// Draws a random object of a random category with a plausible aspect
/// ratio, resting on the water. Both sides are at least `min_side` pixels
/// where the image allows it.
fn random_object<R: Rng>(width: usize, height: usize, min_side: f64, rng: &mut R) -> BoxAnnotation {
    let category = Category::ALL[rng.random_range(0..4)];
    let (w_frac, aspect) = match category {
        Category::CargoShip => (rng.random_range(0.3..0.5), rng.random_range(3.0..4.0)),
        Category::PassengerShip => (rng.random_range(0.25..0.4), rng.random_range(2.2..3.0)),
        Category::ContainerShip => (rng.random_range(0.35..0.55), rng.random_range(4.0..5.0)),
        Category::Buoy => (rng.random_range(0.1..0.15), rng.random_range(0.8..1.2)),
    };
    let min_side = min_side.max(2.0);
    let mut w = (w_frac * width as f64).round().max(min_side);
    let mut h = (w / aspect).round();
    if h < min_side {
        h = min_side;
        w = (h * aspect).round();
    }
    let (w, h) = (w.min(width as f64), h.min(height as f64));
    let horizon = HORIZON * height as f64;
    let x = rng.random_range(0.0..=(width as f64 - w)).round();
    let y_min = (horizon - h * 0.5).max(0.0);
    let y = rng.random_range(y_min..=(height as f64 - h).max(y_min)).round();
    BoxAnnotation {
        category,
        bbox: BoxXywh::new(x, y, w, h),
    }
}

fn overlaps(a: &BoxXywh, b: &BoxXywh) -> bool {
    a.x < b.x2() + 1.0 && b.x < a.x2() + 1.0 && a.y < b.y2() + 1.0 && b.y < a.y2() + 1.0
}

/// Up to `count` non-touching objects.
pub fn random_objects<R: Rng>(
    width: usize,
    height: usize,
    count: usize,
    min_side: f64,
    rng: &mut R,
) -> Vec<BoxAnnotation> {
    let mut out: Vec<BoxAnnotation> = Vec::new();
    for _ in 0..count * 30 {
        if out.len() == count {
            break;
        }
        let cand = random_object(width, height, min_side, rng);
        if out.iter().all(|o| !overlaps(&o.bbox, &cand.bbox)) {
            out.push(cand);
        }
    }
    out
}

/// Randomised degradation producing `scene` from a clean image, or `None`
/// for the clear-weather classes.
pub fn scene_degradation<R: Rng>(scene: SceneClass, width: usize, height: usize, rng: &mut R) -> Option<DegradationSpec> {
    let seed = rng.random();
    let fog = |rng: &mut R, beta: std::ops::Range<f64>| FogParams {
        beta: rng.random_range(beta),
        airlight: rng.random_range(0.8..0.95),
        depth_near: 0.4,
        depth_far: 1.6,
    };
    let degradation = match scene {
        SceneClass::Sunny | SceneClass::Cloudy => return None,
        SceneClass::Foggy => Degradation::Fog(fog(rng, 0.8..1.4)),
        SceneClass::Rainy => Degradation::Rain(RainParams {
            streaks: width * height / 24,
            length: rng.random_range(0.12..0.2) * height as f64,
            angle: rng.random_range(-20.0..20.0),
            opacity: rng.random_range(0.5..0.8),
        }),
        SceneClass::Light => Degradation::Lowlight(LowlightParams {
            gamma: rng.random_range(1.8..2.6),
            gain: rng.random_range(0.3..0.5),
            noise_sigma: 0.02,
        }),
        SceneClass::Hybrid => Degradation::LightFogHybrid {
            lowlight: LowlightParams {
                gamma: rng.random_range(1.6..2.2),
                gain: rng.random_range(0.35..0.55),
                noise_sigma: 0.02,
            },
            fog: fog(rng, 0.5..0.9),
        },
    };
    Some(DegradationSpec::new(degradation, seed))
}

/// One rendered sample: the clean scene, the scene-specific observation and
/// its annotation record.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub record: ImageRecord,
    pub clean: Tensor,
    pub image: Tensor,
}

/// Size and content limits of rendered scenes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub width: usize,
    pub height: usize,
    /// At least one object is drawn.
    pub max_objects: usize,
    /// Minimum box side in pixels.
    pub min_side: f64,
}

impl SynthOptions {
    pub fn new(width: usize, height: usize, max_objects: usize) -> Self {
        Self {
            width,
            height,
            max_objects,
            min_side: 2.0,
        }
    }

    pub fn with_min_side(mut self, min_side: f64) -> Self {
        self.min_side = min_side;
        self
    }
}

/// Renders a scene of class `scene`.
pub fn render_sample<R: Rng>(name: String, scene: SceneClass, opts: &SynthOptions, rng: &mut R) -> Result<SynthSample> {
    let (width, height) = (opts.width, opts.height);
    let cloudy = match scene {
        SceneClass::Sunny => false,
        SceneClass::Cloudy => true,
        _ => rng.random_bool(0.5),
    };
    let mut clean = background(width, height, cloudy, rng);
    let count = rng.random_range(1..=opts.max_objects.max(1));
    let objects = random_objects(width, height, count, opts.min_side, rng);
    for obj in &objects {
        draw_object(&mut clean, obj);
    }
    let image = match scene_degradation(scene, width, height, rng) {
        Some(spec) => apply_degradation(&clean, &spec)?,
        None => clean.clone(),
    };
    Ok(SynthSample {
        record: ImageRecord {
            image: name,
            width: width as u32,
            height: height as u32,
            scene,
            objects,
        },
        clean,
        image,
    })
}

/// `n` samples cycling through `scenes`, named `img_0000.png`, ….
pub fn synth_dataset(n: usize, opts: &SynthOptions, scenes: &[SceneClass], seed: u64) -> Result<Vec<SynthSample>> {
    if scenes.is_empty() {
        return Err(crate::error::Error::invalid("no scene classes to render"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| render_sample(format!("img_{i:04}.png"), scenes[i % scenes.len()], opts, &mut rng))
        .collect()
}
