//! Cardiac valve landmark regression toolkit.
//!
//! Ten valve annulus landmarks (mitral, aortic, tricuspid) are regressed
//! from single long-axis frames by a dilated dense convolutional network.
//! The crate covers the whole pipeline around that network:
//!
//! - [`landmarks`], [`image`], [`sequence`]: taxonomy, frames and the JSON
//!   annotation format.
//! - [`augment`]: geometric, deformable and k-space augmentation.
//! - [`model`] (on top of [`nn`]): the regressor and its backward pass.
//! - [`predict`]: frame-wise inference with the presence rule.
//! - [`curriculum`]: error-proportional minibatch sampling.
//! - [`train`], [`checkpoint`]: the training loop and model files.
//! - [`metrics`]: pixel error tables, long-axis strain, MAPSE/TAPSE.
//! - [`tracker`]: pyramidal Lucas–Kanade baseline.
//! - [`synth`]: synthetic cine phantoms with known ground truth.

pub mod augment;
pub mod checkpoint;
pub mod curriculum;
pub mod dataset;
pub mod error;
pub mod image;
pub mod landmarks;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod predict;
pub mod sequence;
pub mod synth;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image2D, Spacing};
pub use landmarks::{landmarks_for_view, LandmarkId, LandmarkSet, Point, Valve, ViewLabel};
pub use sequence::{load_sequence, save_sequence, LandmarkSource, SequenceRecord};
