//! Training/validation samples: single preprocessed frames with targets.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::image::{preprocess, Image2D};
use crate::landmarks::{LandmarkSet, ViewLabel};
use crate::sequence::{load_sequence, SequenceRecord};
use crate::synth::{Manifest, MANIFEST_FILE};

/// One frame at network input resolution, intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image2D,
    pub landmarks: LandmarkSet,
    pub view: ViewLabel,
    pub subject: String,
    pub frame: usize,
}

pub fn samples_from_sequence(rec: &SequenceRecord, input_size: usize) -> Result<Vec<Sample>> {
    rec.frames
        .iter()
        .zip(&rec.landmarks)
        .enumerate()
        .map(|(frame, (img, lms))| {
            let (image, landmarks) = preprocess(img, lms, input_size)?;
            Ok(Sample {
                image,
                landmarks,
                view: rec.view,
                subject: rec.subject_id.clone(),
                frame,
            })
        })
        .collect()
}

pub fn load_samples(paths: &[PathBuf], input_size: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(samples_from_sequence(&load_sequence(p)?, input_size)?);
    }
    Ok(out)
}

/// Sequence files for a dataset location: either a directory holding a
/// `manifest.json` (restricted to `split`), or a single sequence file.
pub fn resolve_split(location: &Path, split: &str) -> Result<Vec<PathBuf>> {
    if location.is_dir() {
        let manifest = Manifest::load(&location.join(MANIFEST_FILE))?;
        manifest.split_files(location, split)
    } else {
        Ok(vec![location.to_path_buf()])
    }
}

pub fn load_split(location: &Path, split: &str, input_size: usize) -> Result<Vec<Sample>> {
    load_samples(&resolve_split(location, split)?, input_size)
}
