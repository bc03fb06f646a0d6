//! Cine sequences and the JSON annotation format.
//!
//! A sequence is stored as one JSON document plus one 16-bit grayscale PNG
//! per frame, next to the JSON file:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "subject_id": "subj-0003",
//!   "view": "CH4",
//!   "source": "manual",
//!   "width": 64,
//!   "height": 64,
//!   "spacing_mm": [2.5, 2.5],
//!   "ed_frame": 0,
//!   "es_frame": 12,
//!   "apex": [33.1, 8.4],
//!   "frames": [
//!     { "image": "subj-0003_CH4_000.png", "landmarks": { "5": [24.2, 41.0], "6": [40.9, 42.3] } }
//!   ]
//! }
//! ```
//!
//! `spacing_mm` is `[row, col]`. Landmark coordinates are pixels (`[x, y]`,
//! column then row). Absent landmarks are simply omitted. `es_frame` and
//! `apex` may be `null` or left out; `source` defaults to `"manual"`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Spacing};
use crate::landmarks::{LandmarkId, LandmarkSet, Point, ViewLabel};

pub const SCHEMA_VERSION: u32 = 1;

/// Where a sequence's landmarks came from. Manual annotations must label
/// exactly the view's landmark set; predicted and tracked sequences only
/// have to respect the sentinel and bounds rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkSource {
    #[default]
    Manual,
    Predicted,
    Tracked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub subject_id: String,
    pub view: ViewLabel,
    pub source: LandmarkSource,
    pub frames: Vec<Image2D>,
    pub landmarks: Vec<LandmarkSet>,
    pub apex: Option<Point>,
    pub ed_frame: usize,
    pub es_frame: Option<usize>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.frames[0].spacing()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// Copy of this record carrying a different set of per-frame landmarks.
    pub fn with_landmarks(
        &self,
        landmarks: Vec<LandmarkSet>,
        source: LandmarkSource,
    ) -> SequenceRecord {
        SequenceRecord {
            landmarks,
            source,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::InvariantViolation("sequence has no frames".into()))?;
        if self.landmarks.len() != self.frames.len() {
            return Err(Error::InvariantViolation(format!(
                "{} landmark sets for {} frames",
                self.landmarks.len(),
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.width() != first.width()
                || f.height() != first.height()
                || f.spacing() != first.spacing()
            {
                return Err(Error::InvariantViolation(format!(
                    "frame {i} geometry differs from frame 0"
                )));
            }
        }
        for (frame, lms) in self.landmarks.iter().enumerate() {
            for id in LandmarkId::all() {
                let present = lms.is_present(id);
                if present && lms.point(id).is_origin() {
                    return Err(Error::ZeroSentinelConflict { frame, id });
                }
                if present && !self.view.defines(id) && self.source == LandmarkSource::Manual {
                    return Err(Error::InvariantViolation(format!(
                        "frame {frame} annotates landmark {id}, which view {} does not define",
                        self.view
                    )));
                }
                if !present && self.view.defines(id) && self.source == LandmarkSource::Manual {
                    return Err(Error::InvariantViolation(format!(
                        "frame {frame} is missing landmark {id} required by view {}",
                        self.view
                    )));
                }
            }
            lms.check_bounds(first.width(), first.height())
                .map_err(|e| Error::InvariantViolation(format!("frame {frame}: {e}")))?;
        }
        if self.ed_frame >= self.frames.len() {
            return Err(Error::InvariantViolation(format!(
                "ed_frame {} out of range",
                self.ed_frame
            )));
        }
        if let Some(es) = self.es_frame {
            if es >= self.frames.len() {
                return Err(Error::InvariantViolation(format!(
                    "es_frame {es} out of range"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    schema_version: u32,
    subject_id: String,
    view: ViewLabel,
    #[serde(default)]
    source: LandmarkSource,
    width: usize,
    height: usize,
    spacing_mm: Spacing,
    #[serde(default)]
    ed_frame: usize,
    #[serde(default)]
    es_frame: Option<usize>,
    #[serde(default)]
    apex: Option<Point>,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    image: String,
    landmarks: BTreeMap<u8, [f64; 2]>,
}

/// File name of frame `index` for the sequence stored at `json_path`.
pub fn frame_file_name(json_path: &Path, index: usize) -> String {
    let stem = json_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sequence");
    format!("{stem}_{index:03}.png")
}

pub fn load_sequence(path: &Path) -> Result<SequenceRecord> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
    match raw.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::SchemaViolation(format!(
                "unsupported schema_version {v}"
            )))
        }
        None => {
            return Err(Error::SchemaViolation(
                "missing field `schema_version`".into(),
            ))
        }
    }
    let doc: SequenceFile = serde_json::from_value(raw)
        .map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))?;
    if !doc.spacing_mm.is_valid() {
        return Err(Error::SchemaViolation(format!(
            "spacing_mm must be positive, got {:?}",
            doc.spacing_mm
        )));
    }

    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut frames = Vec::with_capacity(doc.frames.len());
    let mut landmarks = Vec::with_capacity(doc.frames.len());
    for (frame, entry) in doc.frames.iter().enumerate() {
        let img = Image2D::load_png(&dir.join(&entry.image), doc.spacing_mm)?;
        if img.width() != doc.width || img.height() != doc.height {
            return Err(Error::InvariantViolation(format!(
                "frame {frame} is {}x{}, header says {}x{}",
                img.width(),
                img.height(),
                doc.width,
                doc.height
            )));
        }
        frames.push(img);
        let mut set = LandmarkSet::empty();
        for (&raw_id, &xy) in &entry.landmarks {
            let id = LandmarkId::new(raw_id).map_err(|_| {
                Error::InvariantViolation(format!("frame {frame}: {raw_id} is not a landmark id"))
            })?;
            set.set(id, Point::from(xy)).map_err(|e| match e {
                Error::ZeroSentinelConflict { id, .. } => Error::ZeroSentinelConflict { frame, id },
                other => other,
            })?;
        }
        landmarks.push(set);
    }

    let record = SequenceRecord {
        subject_id: doc.subject_id,
        view: doc.view,
        source: doc.source,
        frames,
        landmarks,
        apex: doc.apex,
        ed_frame: doc.ed_frame,
        es_frame: doc.es_frame,
    };
    record.validate()?;
    Ok(record)
}

/// Writes the JSON document at `path` and the frame PNGs beside it.
pub fn save_sequence(record: &SequenceRecord, path: &Path) -> Result<()> {
    record.validate()?;
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut entries = Vec::with_capacity(record.frames.len());
    for (i, (img, lms)) in record.frames.iter().zip(&record.landmarks).enumerate() {
        let name = frame_file_name(path, i);
        img.save_png16(&dir.join(&name))?;
        let landmarks = lms
            .present_ids()
            .map(|id| (id.get(), <[f64; 2]>::from(lms.point(id))))
            .collect();
        entries.push(FrameEntry {
            image: name,
            landmarks,
        });
    }
    let doc = SequenceFile {
        schema_version: SCHEMA_VERSION,
        subject_id: record.subject_id.clone(),
        view: record.view,
        source: record.source,
        width: record.width(),
        height: record.height(),
        spacing_mm: record.spacing(),
        ed_frame: record.ed_frame,
        es_frame: record.es_frame,
        apex: record.apex,
        frames: entries,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
