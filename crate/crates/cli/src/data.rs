//! Loading annotated image sets and enhancement pairs from disk.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use msgnet::datakit::{load_image, parse_annotations, resize_image, split_dataset, ImageRecord};
use msgnet::labels::SceneClass;
use msgnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_records(path: &Path) -> CliResult<Vec<ImageRecord>> {
    let ann = parse_annotations(path)?;
    if ann.clipped_boxes > 0 {
        log::warn!("{}: clipped {} boxes to their image bounds", path.display(), ann.clipped_boxes);
    }
    Ok(ann.records)
}

/// Records with their decoded images, index-aligned. `scale[i]` maps
/// resized coordinates back to the original image: `(sx, sy)`.
#[derive(Clone, Debug)]
pub struct LoadedSet {
    pub records: Vec<ImageRecord>,
    pub images: Vec<Tensor>,
    pub scale: Vec<(f64, f64)>,
}

impl LoadedSet {
    pub fn subset(&self, keep: &[ImageRecord]) -> LoadedSet {
        let index: HashMap<&str, usize> = self.records.iter().enumerate().map(|(i, r)| (r.image.as_str(), i)).collect();
        let idx: Vec<usize> = keep.iter().map(|r| index[r.image.as_str()]).collect();
        LoadedSet {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            scale: idx.iter().map(|&i| self.scale[i]).collect(),
        }
    }

    /// Train / validation / test subsets following `data.split`.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> CliResult<[LoadedSet; 3]> {
        let (a, b, c) = split_dataset(&self.records, ratios, seed).map_err(|e| CliError::in_section(e, "data"))?;
        Ok([self.subset(&a), self.subset(&b), self.subset(&c)])
    }
}

/// Loads every image named by the annotation file. Images are resized to
/// `data.image_size` when set (boxes follow); otherwise all images must
/// share one size that is a multiple of `multiple`.
pub fn load_set(config: &RunConfig, multiple: usize) -> CliResult<LoadedSet> {
    let ann = RunConfig::require(&config.data.annotations, "data.annotations")?;
    let root = config.data.image_root.clone().unwrap_or_else(|| base_dir(ann));
    let records = read_records(ann)?;
    if records.is_empty() {
        return Err(CliError::config("data.annotations", "no records"));
    }
    let mut out = LoadedSet {
        records: Vec::with_capacity(records.len()),
        images: Vec::with_capacity(records.len()),
        scale: Vec::with_capacity(records.len()),
    };
    for mut rec in records {
        let img = load_image(root.join(&rec.image))?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if (w as u32, h as u32) != (rec.width, rec.height) {
            return Err(msgnet::Error::invalid(format!(
                "{} is {w}x{h} but its record says {}x{}",
                rec.image, rec.width, rec.height
            ))
            .into());
        }
        let (img, scale) = match config.data.image_size {
            Some([th, tw]) => {
                let (sx, sy) = (tw as f64 / w as f64, th as f64 / h as f64);
                for o in &mut rec.objects {
                    o.bbox = o.bbox.scaled(sx, sy);
                }
                rec.width = tw as u32;
                rec.height = th as u32;
                (resize_image(&img, (th, tw))?, (1.0 / sx, 1.0 / sy))
            }
            None => (img, (1.0, 1.0)),
        };
        out.records.push(rec);
        out.images.push(img);
        out.scale.push(scale);
    }
    let first = out.images[0].shape().to_vec();
    if out.images.iter().any(|i| i.shape() != first.as_slice()) {
        return Err(CliError::config("data.image_size", "images differ in size; set data.image_size"));
    }
    if first[1] % multiple != 0 || first[2] % multiple != 0 {
        return Err(CliError::config(
            "data.image_size",
            format!("{}x{} is not a multiple of {multiple}; set data.image_size", first[1], first[2]),
        ));
    }
    Ok(out)
}

/// One line of a pairs file. Paths are relative to the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub clean: String,
    pub degraded: String,
    pub scene: SceneClass,
}

pub fn read_pairs(path: &Path) -> CliResult<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                msgnet::Error::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

/// `(degraded, clean)` tensors, resized to `data.image_size` when set.
pub fn load_pairs(config: &RunConfig) -> CliResult<Vec<(Tensor, Tensor)>> {
    let file = RunConfig::require(&config.data.pairs, "data.pairs")?;
    let root = base_dir(file);
    let pairs = read_pairs(file)?;
    if pairs.is_empty() {
        return Err(CliError::config("data.pairs", "no pairs"));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let mut d = load_image(root.join(&p.degraded))?;
        let mut c = load_image(root.join(&p.clean))?;
        if let Some([h, w]) = config.data.image_size {
            d = resize_image(&d, (h, w))?;
            c = resize_image(&c, (h, w))?;
        }
        if d.shape() != c.shape() {
            return Err(msgnet::Error::shape(format!("{} and {} differ in size", p.degraded, p.clean)).into());
        }
        out.push((d, c));
    }
    let s = out[0].0.shape().to_vec();
    if out.iter().any(|(d, _)| d.shape() != s.as_slice()) || s[1] % 4 != 0 || s[2] % 4 != 0 {
        return Err(CliError::config(
            "data.image_size",
            "pair images must share one size with sides divisible by 4; set data.image_size",
        ));
    }
    Ok(out)
}
