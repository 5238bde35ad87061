//! JSON Lines annotation interchange and a DarkLabel CSV converter.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{BoxXywh, Category, SceneClass};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub category: Category,
    #[serde(rename = "bbox_xywh")]
    pub bbox: BoxXywh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub scene: SceneClass,
    pub objects: Vec<BoxAnnotation>,
}

impl ImageRecord {
    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

/// Validated records plus the number of boxes that had to be clipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub records: Vec<ImageRecord>,
    pub clipped_boxes: usize,
}

// Categories and scenes are kept as strings here so that an unknown value
// is reported with its line rather than as a generic serde variant error.
#[derive(Deserialize)]
struct RawObject {
    category: String,
    bbox_xywh: [f64; 4],
}

#[derive(Deserialize)]
struct RawRecord {
    image: String,
    width: u32,
    height: u32,
    scene: String,
    objects: Vec<RawObject>,
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    parse_annotations_str(&fs::read_to_string(path)?)
}

/// Parses JSON Lines text; blank lines are skipped and line numbers are 1-based.
pub fn parse_annotations_str(text: &str) -> Result<Annotations> {
    let mut out = Annotations::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            line: line_no,
            reason,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if raw.width == 0 || raw.height == 0 {
            return Err(err(format!("image `{}` has zero width or height", raw.image)));
        }
        let scene: SceneClass = raw.scene.parse().map_err(|e: Error| err(e.to_string()))?;
        let (w, h) = (raw.width as f64, raw.height as f64);
        let mut objects = Vec::with_capacity(raw.objects.len());
        for obj in raw.objects {
            let category: Category = obj.category.parse().map_err(|e: Error| err(e.to_string()))?;
            let bbox = BoxXywh::from(obj.bbox_xywh);
            if !bbox.is_finite() || bbox.w <= 0.0 || bbox.h <= 0.0 {
                return Err(err(format!("box {:?} must be finite with positive size", obj.bbox_xywh)));
            }
            let bbox = if bbox.within(w, h) {
                bbox
            } else {
                let clipped = bbox.clip(w, h);
                if clipped.w <= 0.0 || clipped.h <= 0.0 {
                    return Err(err(format!("box {:?} lies outside the {w}x{h} image", obj.bbox_xywh)));
                }
                out.clipped_boxes += 1;
                clipped
            };
            objects.push(BoxAnnotation { category, bbox });
        }
        if !seen.insert(raw.image.clone()) {
            return Err(err(format!("duplicate image path `{}`", raw.image)));
        }
        out.records.push(ImageRecord {
            image: raw.image,
            width: raw.width,
            height: raw.height,
            scene,
            objects,
        });
    }
    if out.clipped_boxes > 0 {
        log::warn!("clipped {} out-of-bounds boxes", out.clipped_boxes);
    }
    Ok(out)
}

pub fn write_annotations(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Normalises DarkLabel class names ("Cargo Ship", "cargo-ship") to our labels.
fn darklabel_category(name: &str) -> Result<Category> {
    let norm: String = name
        .trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect();
    norm.parse()
}

/// Converts a DarkLabel export with rows `frame,cname,id,x1,y1,w,h` into
/// records, one per frame. `image_template` must contain `{frame}`, which
/// is replaced by the zero-padded (6 digit) frame number.
pub fn import_darklabel(
    csv_text: &str,
    image_template: &str,
    width: u32,
    height: u32,
    scene: SceneClass,
) -> Result<Vec<ImageRecord>> {
    if !image_template.contains("{frame}") {
        return Err(Error::invalid("image template must contain `{frame}`"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut frames: BTreeMap<u64, Vec<BoxAnnotation>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let row = row?;
        let err = |reason: String| Error::Parse { line, reason };
        if row.len() < 7 {
            return Err(err(format!("expected 7 fields, found {}", row.len())));
        }
        let frame: u64 = row[0].parse().map_err(|_| err(format!("bad frame `{}`", &row[0])))?;
        let category = darklabel_category(&row[1]).map_err(|e| err(e.to_string()))?;
        let mut nums = [0.0; 4];
        for (k, v) in nums.iter_mut().enumerate() {
            *v = row[3 + k]
                .parse()
                .map_err(|_| err(format!("bad coordinate `{}`", &row[3 + k])))?;
        }
        frames.entry(frame).or_default().push(BoxAnnotation {
            category,
            bbox: BoxXywh::from(nums),
        });
    }
    let records: Vec<ImageRecord> = frames
        .into_iter()
        .map(|(frame, objects)| ImageRecord {
            image: image_template.replace("{frame}", &format!("{frame:06}")),
            width,
            height,
            scene,
            objects,
        })
        .collect();
    // Round-trip through the canonical parser so conversions get the same
    // validation and clipping.
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).map(|s| s + "\n"))
        .collect::<std::result::Result<_, _>>()?;
    Ok(parse_annotations_str(&text)?.records)
}
