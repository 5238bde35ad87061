//! Closed label sets and box types shared across the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Object categories of the inland-waterway vessel dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CargoShip,
    PassengerShip,
    Buoy,
    ContainerShip,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::CargoShip,
        Category::PassengerShip,
        Category::Buoy,
        Category::ContainerShip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::CargoShip => "cargo_ship",
            Category::PassengerShip => "passenger_ship",
            Category::Buoy => "buoy",
            Category::ContainerShip => "container_ship",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category `{s}`")))
    }
}

/// Environment under which an image was captured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    Sunny,
    Cloudy,
    Foggy,
    Rainy,
    Light,
    Hybrid,
}

impl SceneClass {
    pub const ALL: [SceneClass; 6] = [
        SceneClass::Sunny,
        SceneClass::Cloudy,
        SceneClass::Foggy,
        SceneClass::Rainy,
        SceneClass::Light,
        SceneClass::Hybrid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Sunny => "sunny",
            SceneClass::Cloudy => "cloudy",
            SceneClass::Foggy => "foggy",
            SceneClass::Rainy => "rainy",
            SceneClass::Light => "light",
            SceneClass::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene `{s}`")))
    }
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxXywh {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoxXywh {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxXywh> for [f64; 4] {
    fn from(b: BoxXywh) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoxXywh {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Intersection with `[0, width] × [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let x1 = self.x.clamp(0.0, width);
        let y1 = self.y.clamp(0.0, height);
        let x2 = self.x2().clamp(0.0, width);
        let y2 = self.y2().clamp(0.0, height);
        Self::from_corners(x1, y1, x2.max(x1), y2.max(y1))
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x2() <= width && self.y2() <= height
    }

    /// Strict interior test.
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px > self.x && px < self.x2() && py > self.y && py < self.y2()
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }
}

/// One scored detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: Category,
    pub score: f64,
    #[serde(rename = "bbox_xywh")]
    pub bbox: BoxXywh,
}
