//! A landmark with noisy annotations should pull sampling weight toward the
//! images of its view.

mod common;

use common::*;
use rand_distr::{Distribution, Normal};
use valvenet::augment::AugmentConfig;
use valvenet::dataset::{samples_from_sequence, Sample};
use valvenet::synth::{generate_subject_view, DatasetOptions};
use valvenet::train::{train_on, ModelPreset, TrainConfig};
use valvenet::{Point, ViewLabel};

const NOISY: u8 = 1;
const SIGMA_PX: f64 = 3.0;

/// Independent annotation noise on the noisy landmark.
fn jitter(samples: &[Sample], seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, SIGMA_PX).unwrap();
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if let Some(p) = s.landmarks.get(id(NOISY)) {
                let side = s.image.width() as f64 - 1.0;
                let q = Point::new(
                    (p.x + noise.sample(&mut r)).clamp(1.0, side - 1.0),
                    (p.y + noise.sample(&mut r)).clamp(1.0, side - 1.0),
                );
                s.landmarks.set(id(NOISY), q).unwrap();
            }
            s
        })
        .collect()
}

#[test]
fn noisy_landmark_raises_its_view_weight() {
    let opts = DatasetOptions::new(4, 17);
    let mut clean = Vec::new();
    for subject in 0..4 {
        for view in ViewLabel::ALL {
            let rec = generate_subject_view(&opts, subject, view).unwrap();
            clean.extend(
                samples_from_sequence(&rec, 32)
                    .unwrap()
                    .into_iter()
                    .step_by(10),
            );
        }
    }
    let (train, val) = (jitter(&clean, 1), jitter(&clean, 2));
    let cfg = TrainConfig {
        model: ModelPreset::Tiny,
        input_size: 32,
        iterations: 300,
        epoch_length: 150,
        batch_size: 8,
        learning_rate: 1e-3,
        augment: AugmentConfig::none(),
        checkpoint_every: 0,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train_on(&cfg, &train, &val, None).unwrap();
    assert_eq!(out.epochs.len(), 2);
    let w = &out.curriculum.per_image_weight;
    let mean_for = |v: ViewLabel| {
        let ws: Vec<f64> = train
            .iter()
            .zip(w)
            .filter(|(s, _)| s.view == v)
            .map(|(_, &w)| w)
            .collect();
        ws.iter().sum::<f64>() / ws.len() as f64
    };
    let (ch2, ch3, ch4) = (
        mean_for(ViewLabel::Ch2),
        mean_for(ViewLabel::Ch3),
        mean_for(ViewLabel::Ch4),
    );
    assert!(
        ch2 > ch3 && ch2 > ch4,
        "mean weights CH2 {ch2:.4}, CH3 {ch3:.4}, CH4 {ch4:.4}; errors {:?}",
        out.curriculum.per_landmark_error
    );
}
