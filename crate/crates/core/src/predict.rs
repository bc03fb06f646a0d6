//! Frame-wise inference on whole sequences.
//!
//! Each frame is handled independently: resampled to the network input,
//! regressed, thresholded for presence, and mapped back to frame pixels.

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::{preprocess, Image2D};
use crate::landmarks::{LandmarkSet, Point};
use crate::model::Regressor;
use crate::sequence::{LandmarkSource, SequenceRecord};

/// Outputs closer than this to the origin (network pixels) read as absent.
pub const PRESENCE_THRESHOLD_PX: f64 = 5.0;

/// Landmarks in network input coordinates.
pub fn predict_network(
    model: &Regressor<f32>,
    input: &Image2D,
    presence_threshold: f64,
) -> Result<LandmarkSet> {
    let out = model.forward_one(input.pixels())?;
    let coords: Vec<f64> = out.iter().map(|&v| v as f64).collect();
    Ok(LandmarkSet::from_regression(&coords, presence_threshold))
}

/// Landmarks in the pixel grid of `frame`. Frames must be square so that
/// resampling to the network input keeps the aspect ratio.
pub fn predict_frame(
    model: &Regressor<f32>,
    frame: &Image2D,
    presence_threshold: f64,
) -> Result<LandmarkSet> {
    let size = model.spec().input_size[0];
    if frame.width() != frame.height() {
        return Err(Error::Shape(format!(
            "frame is {}x{}; the model expects square frames resampled to {size}x{size}",
            frame.width(),
            frame.height()
        )));
    }
    let (input, _) = preprocess(frame, &LandmarkSet::empty(), size)?;
    let net = predict_network(model, &input, presence_threshold)?;
    // Points that map outside the frame become absent.
    let s = frame.width() as f64 / size as f64;
    Ok(net.map_points(frame.width(), frame.height(), |p| {
        Point::new((p.x + 0.5) * s - 0.5, (p.y + 0.5) * s - 0.5)
    }))
}

pub fn predict_sequence(
    model: &Regressor<f32>,
    seq: &SequenceRecord,
    presence_threshold: f64,
) -> Result<SequenceRecord> {
    let lms = seq
        .frames
        .iter()
        .map(|f| predict_frame(model, f, presence_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(seq.with_landmarks(lms, LandmarkSource::Predicted))
}

/// Predictions for already preprocessed samples, in network coordinates.
pub fn predict_samples_thresholded(
    model: &Regressor<f32>,
    samples: &[Sample],
    presence_threshold: f64,
) -> Result<Vec<LandmarkSet>> {
    samples
        .iter()
        .map(|s| predict_network(model, &s.image, presence_threshold))
        .collect()
}
