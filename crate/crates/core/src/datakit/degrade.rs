//! Synthetic weather and illumination degradations of `[3, H, W]` images in `[0, 1]`.

use msgnet_autograd::Tensor;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::check_image;
use crate::error::{Error, Result};

/// Scattering fog `I = J·t + A·(1 − t)`, `t = exp(−β·d)`, with depth `d`
/// ramping linearly from `depth_far` on the top row to `depth_near` on the
/// bottom row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FogParams {
    pub beta: f64,
    pub airlight: f64,
    pub depth_near: f64,
    pub depth_far: f64,
}

/// Oriented streaks, blurred, then alpha-blended towards a bright rain colour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    pub streaks: usize,
    /// Streak length in pixels.
    pub length: f64,
    /// Angle from vertical in degrees.
    pub angle: f64,
    pub opacity: f64,
}

/// `I = gain · J^gamma + N(0, noise_sigma²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowlightParams {
    pub gamma: f64,
    pub gain: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    Fog(FogParams),
    Rain(RainParams),
    Lowlight(LowlightParams),
    /// Low light followed by fog.
    LightFogHybrid { lowlight: LowlightParams, fog: FogParams },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub degradation: Degradation,
    #[serde(default)]
    pub seed: u64,
}

/// Intensity streak pixels are pulled towards.
const RAIN_LEVEL: f64 = 0.85;

impl FogParams {
    pub fn uniform(beta: f64, airlight: f64, depth: f64) -> Self {
        Self {
            beta,
            airlight,
            depth_near: depth,
            depth_far: depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("fog.beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        if !(0.7..=1.0).contains(&self.airlight) {
            return Err(Error::config("fog.airlight", format!("must lie in [0.7, 1.0], got {}", self.airlight)));
        }
        for (name, d) in [("fog.depth_near", self.depth_near), ("fog.depth_far", self.depth_far)] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {d}")));
            }
        }
        Ok(())
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length >= 0.0 && self.length.is_finite()) {
            return Err(Error::config("rain.length", format!("must be finite and >= 0, got {}", self.length)));
        }
        if !self.angle.is_finite() || self.angle.abs() > 90.0 {
            return Err(Error::config("rain.angle", format!("must lie in [-90, 90], got {}", self.angle)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::config("rain.opacity", format!("must lie in [0, 1], got {}", self.opacity)));
        }
        Ok(())
    }
}

impl LowlightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::config("lowlight.gamma", format!("must be finite and >= 1, got {}", self.gamma)));
        }
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::config("lowlight.gain", format!("must lie in (0, 1], got {}", self.gain)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(
                "lowlight.noise_sigma",
                format!("must be finite and >= 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

impl DegradationSpec {
    pub fn new(degradation: Degradation, seed: u64) -> Self {
        Self { degradation, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.degradation {
            Degradation::Fog(f) => f.validate(),
            Degradation::Rain(r) => r.validate(),
            Degradation::Lowlight(l) => l.validate(),
            Degradation::LightFogHybrid { lowlight, fog } => {
                lowlight.validate()?;
                fog.validate()
            }
        }
    }
}

pub fn apply_degradation(image: &Tensor, spec: &DegradationSpec) -> Result<Tensor> {
    check_image(image)?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = image.clone();
    match &spec.degradation {
        Degradation::Fog(f) => fog(&mut out, f),
        Degradation::Rain(r) => rain(&mut out, r, &mut rng),
        Degradation::Lowlight(l) => lowlight(&mut out, l, &mut rng),
        Degradation::LightFogHybrid { lowlight: l, fog: f } => {
            lowlight(&mut out, l, &mut rng);
            fog(&mut out, f);
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

fn depth_at(row: usize, height: usize, f: &FogParams) -> f64 {
    if height <= 1 {
        return f.depth_near;
    }
    let s = row as f64 / (height - 1) as f64;
    f.depth_far + (f.depth_near - f.depth_far) * s
}

fn fog(img: &mut Tensor, f: &FogParams) {
    let h = img.shape()[1];
    for mut channel in img.axis_iter_mut(Axis(0)) {
        for (row, mut line) in channel.axis_iter_mut(Axis(0)).enumerate() {
            let t = (-f.beta * depth_at(row, h, f)).exp();
            line.mapv_inplace(|j| j * t + f.airlight * (1.0 - t));
        }
    }
}

fn rain<R: Rng>(img: &mut Tensor, p: &RainParams, rng: &mut R) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if p.streaks == 0 || p.opacity == 0.0 {
        return;
    }
    let mut mask = Array2::<f64>::zeros((h, w));
    let (dx, dy) = (p.angle.to_radians().sin(), p.angle.to_radians().cos());
    let steps = (p.length * 2.0).ceil().max(1.0) as usize;
    for _ in 0..p.streaks {
        let x0 = rng.random::<f64>() * w as f64;
        let y0 = rng.random::<f64>() * h as f64;
        for s in 0..=steps {
            let t = s as f64 * 0.5;
            let (x, y) = (x0 + dx * t, y0 + dy * t);
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                mask[[y as usize, x as usize]] = 1.0;
            }
        }
    }
    let alpha = (box_blur3(&mask) * p.opacity).into_dyn();
    for mut channel in img.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut channel)
            .and(&alpha)
            .for_each(|v, &a| *v = *v * (1.0 - a) + RAIN_LEVEL * a);
    }
}

fn box_blur3(m: &Array2<f64>) -> Array2<f64> {
    let (h, w) = m.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (y, x) = (i as i64 + di, j as i64 + dj);
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    acc += m[[y as usize, x as usize]];
                }
            }
        }
        acc / 9.0
    })
}

fn lowlight<R: Rng>(img: &mut Tensor, p: &LowlightParams, rng: &mut R) {
    img.mapv_inplace(|v| p.gain * v.powf(p.gamma));
    if p.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, p.noise_sigma).expect("sigma validated");
        img.mapv_inplace(|v| v + noise.sample(rng));
    }
}
