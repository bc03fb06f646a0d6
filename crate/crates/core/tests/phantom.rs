mod common;

use common::*;
use valvenet::metrics::{es_frame_estimate, long_axis_strain, mapse_tapse, peak_strain};
use valvenet::synth::{
    generate_phantom_sequence, generate_subject_view, DatasetOptions, PhantomConfig, PhantomRanges,
};
use valvenet::{Image2D, SequenceRecord, ViewLabel};

fn gradient_magnitude(img: &Image2D) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let at = |x: usize, y: usize| img.get(x.min(w - 1), y.min(h - 1)) as f64;
    let mut g = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y.saturating_sub(1))) / 2.0;
            g[y * w + x] = gx.hypot(gy);
        }
    }
    g
}

/// Every landmark has an edge stronger than the image's 80th gradient
/// percentile within 3 px.
fn assert_labels_on_edges(seq: &SequenceRecord) {
    for (t, (img, lms)) in seq.frames.iter().zip(&seq.landmarks).enumerate() {
        let g = gradient_magnitude(img);
        let mut sorted = g.clone();
        sorted.sort_by(f64::total_cmp);
        let p80 = sorted[(sorted.len() - 1) * 8 / 10];
        let w = img.width() as i64;
        for id in lms.present_ids() {
            let p = lms.point(id);
            let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
            let mut best: f64 = 0.0;
            for dy in -3..=3i64 {
                for dx in -3..=3i64 {
                    let (x, y) = (cx + dx, cy + dy);
                    if dx * dx + dy * dy <= 9
                        && x >= 0
                        && y >= 0
                        && x < w
                        && y < img.height() as i64
                    {
                        best = best.max(g[(y * w + x) as usize]);
                    }
                }
            }
            assert!(
                best > p80,
                "{} {} frame {t} landmark {id}: {best:.4} <= p80 {p80:.4}",
                seq.subject_id,
                seq.view
            );
        }
    }
}

fn sampled_config(k: u64, view: ViewLabel) -> PhantomConfig {
    let ranges = PhantomRanges::default();
    let subject = ranges.sample_subject(&mut rng(k));
    ranges.place_view(&subject, view, &mut rng(k + 1000))
}

#[test]
fn landmarks_sit_on_blood_wall_boundaries() {
    let opts = DatasetOptions::new(12, 7);
    for subject in 0..12 {
        for view in ViewLabel::ALL {
            assert_labels_on_edges(&generate_subject_view(&opts, subject, view).unwrap());
        }
    }
}

#[test]
fn programmed_excursions_and_strain_are_recovered() {
    for k in 0..20 {
        for view in ViewLabel::ALL {
            let cfg = sampled_config(k, view);
            let seq = generate_phantom_sequence(&cfg, &mut rng(k)).unwrap();
            for &valve in view.valves() {
                let curve = long_axis_strain(&seq, &seq.landmarks, valve).unwrap();
                assert_eq!(curve.values[seq.ed_frame], 0.0);
                let (peak, _) = peak_strain(&curve);
                assert!(
                    (peak - cfg.peak_strain).abs() <= 0.01,
                    "{view} {valve:?}: {peak} vs {}",
                    cfg.peak_strain
                );
            }
            if view == ViewLabel::Ch4 {
                let (m, t) = mapse_tapse(&seq, &seq.landmarks).unwrap();
                assert!(
                    (m - cfg.mapse_mm).abs() <= 0.5,
                    "MAPSE {m} vs {}",
                    cfg.mapse_mm
                );
                assert!(
                    (t - cfg.tapse_mm).abs() <= 0.5,
                    "TAPSE {t} vs {}",
                    cfg.tapse_mm
                );
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_sequences() {
    let opts = DatasetOptions::new(3, 11);
    for view in ViewLabel::ALL {
        let a = generate_subject_view(&opts, 2, view).unwrap();
        assert_eq!(a, generate_subject_view(&opts, 2, view).unwrap());
        assert_ne!(
            a,
            generate_subject_view(&DatasetOptions::new(3, 12), 2, view).unwrap()
        );
    }
}

#[test]
fn strain_trough_marks_end_systole() {
    let cfg = PhantomConfig {
        es_fraction: 14.0 / 30.0,
        ..PhantomConfig::for_view(ViewLabel::Ch4)
    };
    assert_eq!(cfg.es_frame(), 14);
    let seq = generate_phantom_sequence(&cfg, &mut rng(6)).unwrap();
    for valve in [valvenet::Valve::Mitral, valvenet::Valve::Tricuspid] {
        assert_eq!(
            es_frame_estimate(&long_axis_strain(&seq, &seq.landmarks, valve).unwrap()),
            14
        );
    }
}
