//! Dataset statistics: category, scale, aspect-ratio, density and scene tables.
//!
//! A [`StatsReport`] keeps raw counts plus sorted per-object samples, so two
//! reports over disjoint record sets merge into exactly the report of their
//! union. Percentages and percentiles are derived on demand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::annotations::ImageRecord;
use crate::error::Result;
use crate::labels::{Category, SceneClass};

/// Area thresholds (pixels²) separating small / medium / large objects.
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA: f64 = 96.0 * 96.0;

pub const SCALE_BUCKETS: [&str; 3] = ["small", "medium", "large"];

/// Unit-width aspect bins `[0,1) … [9,10)` plus an open `[10,inf)` bin.
pub const ASPECT_BINS: usize = 11;

pub const PERCENTILES: [f64; 9] = [10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0, 99.5, 100.0];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsReport {
    pub images: u64,
    pub objects: u64,
    pub category_counts: [u64; 4],
    pub scale_counts: [u64; 3],
    pub aspect_counts: [u64; ASPECT_BINS],
    /// Images keyed by their object count.
    pub objects_per_image: BTreeMap<usize, u64>,
    pub scene_counts: [u64; 6],
    relative_scales: Vec<f64>,
    aspect_ratios: Vec<f64>,
}

pub fn scale_bucket(area: f64) -> usize {
    if area < SMALL_AREA {
        0
    } else if area < MEDIUM_AREA {
        1
    } else {
        2
    }
}

pub fn aspect_bin(ratio: f64) -> usize {
    (ratio.max(0.0).floor() as usize).min(ASPECT_BINS - 1)
}

fn aspect_bin_label(i: usize) -> String {
    if i + 1 == ASPECT_BINS {
        format!("[{i},inf)")
    } else {
        format!("[{i},{})", i + 1)
    }
}

fn percent(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.sort_by(f64::total_cmp);
    out
}

/// Nearest-rank percentile of sorted samples.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn compute_stats_report(records: &[ImageRecord]) -> StatsReport {
    let mut r = StatsReport::default();
    for rec in records {
        r.images += 1;
        r.scene_counts[rec.scene.index()] += 1;
        *r.objects_per_image.entry(rec.objects.len()).or_default() += 1;
        for obj in &rec.objects {
            let b = obj.bbox;
            r.objects += 1;
            r.category_counts[obj.category.index()] += 1;
            r.scale_counts[scale_bucket(b.area())] += 1;
            r.aspect_counts[aspect_bin(b.aspect_ratio())] += 1;
            r.aspect_ratios.push(b.aspect_ratio());
            r.relative_scales.push(b.area() / rec.area());
        }
    }
    r.aspect_ratios.sort_by(f64::total_cmp);
    r.relative_scales.sort_by(f64::total_cmp);
    r
}

/// One count table: labels, counts and the total its percentages refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub file: &'static str,
    pub key: &'static str,
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CountTable {
    pub fn percentages(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| percent(c, self.total)).collect()
    }
}

#[derive(Serialize)]
struct Row<'a> {
    label: &'a str,
    count: u64,
    percent: f64,
}

impl StatsReport {
    pub fn merge(&self, other: &StatsReport) -> StatsReport {
        let add = |a: &[u64], b: &[u64]| -> Vec<u64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let mut objects_per_image = self.objects_per_image.clone();
        for (&k, &v) in &other.objects_per_image {
            *objects_per_image.entry(k).or_default() += v;
        }
        StatsReport {
            images: self.images + other.images,
            objects: self.objects + other.objects,
            category_counts: add(&self.category_counts, &other.category_counts).try_into().unwrap(),
            scale_counts: add(&self.scale_counts, &other.scale_counts).try_into().unwrap(),
            aspect_counts: add(&self.aspect_counts, &other.aspect_counts).try_into().unwrap(),
            objects_per_image,
            scene_counts: add(&self.scene_counts, &other.scene_counts).try_into().unwrap(),
            relative_scales: merge_sorted(&self.relative_scales, &other.relative_scales),
            aspect_ratios: merge_sorted(&self.aspect_ratios, &other.aspect_ratios),
        }
    }

    /// Per-object aspect ratios (w / h), ascending.
    pub fn aspect_ratios(&self) -> &[f64] {
        &self.aspect_ratios
    }

    /// Per-object box area over image area, ascending.
    pub fn relative_scales(&self) -> &[f64] {
        &self.relative_scales
    }

    pub fn category_percentages(&self) -> [f64; 4] {
        self.category_counts.map(|c| percent(c, self.objects))
    }

    pub fn scale_percentages(&self) -> [f64; 3] {
        self.scale_counts.map(|c| percent(c, self.objects))
    }

    pub fn scene_percentages(&self) -> [f64; 6] {
        self.scene_counts.map(|c| percent(c, self.images))
    }

    /// `(percentile, relative scale)` rows for [`PERCENTILES`]; empty when
    /// there are no objects.
    pub fn relative_scale_percentiles(&self) -> Vec<(f64, f64)> {
        PERCENTILES
            .iter()
            .filter_map(|&p| nearest_rank(&self.relative_scales, p).map(|v| (p, v)))
            .collect()
    }

    /// Fraction (in percent) of objects whose relative scale is below `threshold`.
    pub fn share_below_relative_scale(&self, threshold: f64) -> f64 {
        let n = self.relative_scales.partition_point(|&v| v < threshold);
        percent(n as u64, self.objects)
    }

    /// The five count tables in output order.
    pub fn tables(&self) -> Vec<CountTable> {
        let strs = |v: Vec<&str>| v.into_iter().map(String::from).collect::<Vec<_>>();
        vec![
            CountTable {
                file: "categories.csv",
                key: "category",
                labels: strs(Category::ALL.iter().map(|c| c.as_str()).collect()),
                counts: self.category_counts.to_vec(),
                total: self.objects,
            },
            CountTable {
                file: "scales.csv",
                key: "bucket",
                labels: strs(SCALE_BUCKETS.to_vec()),
                counts: self.scale_counts.to_vec(),
                total: self.objects,
            },
            CountTable {
                file: "aspect_ratio.csv",
                key: "bin",
                labels: (0..ASPECT_BINS).map(aspect_bin_label).collect(),
                counts: self.aspect_counts.to_vec(),
                total: self.objects,
            },
            CountTable {
                file: "objects_per_image.csv",
                key: "objects",
                labels: self.objects_per_image.keys().map(|k| k.to_string()).collect(),
                counts: self.objects_per_image.values().copied().collect(),
                total: self.images,
            },
            CountTable {
                file: "scenes.csv",
                key: "scene",
                labels: strs(SceneClass::ALL.iter().map(|s| s.as_str()).collect()),
                counts: self.scene_counts.to_vec(),
                total: self.images,
            },
        ]
    }

    /// Writes the CSV tables and `summary.json` into `dir`.
    ///
    /// | file | columns |
    /// |------|---------|
    /// | `categories.csv` | `category,count,percent` |
    /// | `scales.csv` | `bucket,count,percent` |
    /// | `aspect_ratio.csv` | `bin,count,percent` |
    /// | `objects_per_image.csv` | `objects,count,percent` |
    /// | `scenes.csv` | `scene,count,percent` |
    /// | `relative_scale.csv` | `percentile,relative_scale` |
    ///
    /// Percentages are printed with four decimals.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let tables = self.tables();
        for t in &tables {
            let mut w = csv::Writer::from_path(dir.join(t.file))?;
            w.write_record([t.key, "count", "percent"])?;
            for ((label, count), pct) in t.labels.iter().zip(&t.counts).zip(t.percentages()) {
                w.write_record([label.clone(), count.to_string(), format!("{pct:.4}")])?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("relative_scale.csv"))?;
        w.write_record(["percentile", "relative_scale"])?;
        for (p, v) in self.relative_scale_percentiles() {
            w.write_record([format!("{p}"), format!("{v:.8}")])?;
        }
        w.flush()?;

        let mut summary = serde_json::Map::new();
        summary.insert("images".into(), self.images.into());
        summary.insert("objects".into(), self.objects.into());
        for t in &tables {
            let rows: Vec<Row<'_>> = t
                .labels
                .iter()
                .zip(&t.counts)
                .zip(t.percentages())
                .map(|((label, &count), percent)| Row { label, count, percent })
                .collect();
            summary.insert(t.file.trim_end_matches(".csv").into(), serde_json::to_value(rows)?);
        }
        summary.insert(
            "relative_scale_percentiles".into(),
            serde_json::to_value(self.relative_scale_percentiles())?,
        );
        summary.insert(
            "median_aspect_ratio".into(),
            serde_json::to_value(super::limits::lower_median(&self.aspect_ratios))?,
        );
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::annotations::BoxAnnotation;
    use crate::labels::BoxXywh;

    pub(crate) fn three_box_fixture() -> Vec<ImageRecord> {
        let obj = |category, w, h| BoxAnnotation {
            category,
            bbox: BoxXywh::new(0.0, 0.0, w, h),
        };
        vec![
            ImageRecord {
                image: "a.png".into(),
                width: 320,
                height: 320,
                scene: SceneClass::Sunny,
                objects: vec![obj(Category::CargoShip, 100.0, 30.0), obj(Category::Buoy, 20.0, 10.0)],
            },
            ImageRecord {
                image: "b.png".into(),
                width: 320,
                height: 320,
                scene: SceneClass::Foggy,
                objects: vec![obj(Category::CargoShip, 50.0, 15.0)],
            },
        ]
    }

    #[test]
    fn three_box_fixture_counts() {
        let r = compute_stats_report(&three_box_fixture());
        assert_eq!(r.category_counts, [2, 0, 1, 0]);
        assert_eq!(r.scale_counts, [2, 1, 0]);
        let ar = r.aspect_ratios();
        assert_eq!(ar.len(), 3);
        assert_eq!(ar[0], 2.0);
        assert_eq!(ar[1], 100.0 / 30.0);
        assert_eq!(ar[2], 50.0 / 15.0);
        assert_eq!(r.aspect_counts[2], 1);
        assert_eq!(r.aspect_counts[3], 2);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let r = compute_stats_report(&[]);
        assert_eq!(r, StatsReport::default());
        assert_eq!(r.category_percentages(), [0.0; 4]);
        assert!(r.relative_scale_percentiles().is_empty());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 50.0), Some(2.0));
        assert_eq!(nearest_rank(&v, 100.0), Some(4.0));
        assert_eq!(nearest_rank(&v, 0.0), Some(1.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(scale_bucket(1023.0), 0);
        assert_eq!(scale_bucket(1024.0), 1);
        assert_eq!(scale_bucket(9215.9), 1);
        assert_eq!(scale_bucket(9216.0), 2);
        assert_eq!(aspect_bin(0.5), 0);
        assert_eq!(aspect_bin(10.0), 10);
        assert_eq!(aspect_bin(57.0), 10);
    }
}
