#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use valvenet::augment::{apply_affine, warp_ffd, Affine, FfdField};
use valvenet::landmarks::LandmarkId;
use valvenet::model::{loss_and_grad, NormKind, Regressor, RegressorSpec, OUTPUTS};
use valvenet::{Image2D, LandmarkSet, Point, Spacing};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn id(i: u8) -> LandmarkId {
    LandmarkId::new(i).unwrap()
}

pub fn spike(w: usize, h: usize, x: usize, y: usize) -> Image2D {
    let mut img = Image2D::zeros(w, h, Spacing::isotropic(1.0));
    img.set(x, y, 1.0);
    img
}

fn argmax_point(img: &Image2D) -> Point {
    let (x, y) = img.argmax();
    Point::new(x as f64, y as f64)
}

/// Distance between the brightest pixel of the warped spike and the
/// landmark moved by the same transform. `None` when the landmark left the
/// image.
pub fn affine_spike_error(w: usize, h: usize, x: usize, y: usize, t: &Affine) -> Option<f64> {
    let lms = LandmarkSet::empty()
        .with(id(1), Point::new(x as f64, y as f64))
        .unwrap();
    let (img, moved) = apply_affine(&spike(w, h, x, y), &lms, t);
    moved.get(id(1)).map(|p| argmax_point(&img).distance(p))
}

pub fn ffd_spike_error(w: usize, h: usize, x: usize, y: usize, field: &FfdField) -> Option<f64> {
    let lms = LandmarkSet::empty()
        .with(id(1), Point::new(x as f64, y as f64))
        .unwrap();
    let (img, moved) = warp_ffd(&spike(w, h, x, y), &lms, field);
    moved.get(id(1)).map(|p| argmax_point(&img).distance(p))
}

/// Directly summed 2D DFT, O(N²).
pub fn dft_direct(img: &Image2D) -> Vec<Complex<f64>> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![Complex::new(0.0, 0.0); w * h];
    for ky in 0..h {
        for kx in 0..w {
            let mut acc = Complex::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((kx * x) as f64 / w as f64 + (ky * y) as f64 / h as f64);
                    acc += Complex::from_polar(img.get(x, y) as f64, phase);
                }
            }
            out[ky * w + kx] = acc;
        }
    }
    out
}

pub fn energy(img: &Image2D) -> f64 {
    img.pixels().iter().map(|&v| (v as f64) * (v as f64)).sum()
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image2D {
    let mut r = rng(seed);
    Image2D::from_fn(w, h, Spacing::isotropic(1.0), |_, _| r.random::<f32>())
}

/// Smooth, corner-rich texture for tracking tests, about one blob per
/// 48 px² so no tracking window is flat.
pub fn blob_texture(w: usize, h: usize, seed: u64) -> Image2D {
    blob_texture_n(w, h, seed, w * h / 48)
}

pub fn blob_texture_n(w: usize, h: usize, seed: u64, n: usize) -> Image2D {
    let mut r = rng(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                r.random_range(0.0..w as f64),
                r.random_range(0.0..h as f64),
                r.random_range(2.0..5.0),
                r.random_range(0.3..1.0),
            )
        })
        .collect();
    Image2D::from_fn(w, h, Spacing::isotropic(1.0), |x, y| {
        blobs
            .iter()
            .map(|&(cx, cy, s, a)| {
                a * (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * s * s)).exp()
            })
            .sum::<f64>() as f32
    })
}

/// `img` translated by integer `(dx, dy)`; uncovered pixels are zero.
pub fn translate(img: &Image2D, dx: i64, dy: i64) -> Image2D {
    Image2D::from_fn(img.width(), img.height(), img.spacing(), |x, y| {
        let (sx, sy) = (x as i64 - dx, y as i64 - dy);
        if sx < 0 || sy < 0 || sx >= img.width() as i64 || sy >= img.height() as i64 {
            0.0
        } else {
            img.get(sx as usize, sy as usize)
        }
    })
}

fn gradient_batch(rng: &mut ChaCha8Rng, side: usize) -> (Vec<Vec<f64>>, Vec<[f64; OUTPUTS]>) {
    let images: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..side * side).map(|_| rng.random::<f64>()).collect())
        .collect();
    let targets = (0..2)
        .map(|k| {
            let mut t = [0.0; OUTPUTS];
            // Second image keeps the absent sentinel on half the heads.
            for (j, v) in t.iter_mut().enumerate() {
                if k == 0 || j < OUTPUTS / 2 {
                    *v = rng.random_range(2.0..30.0);
                }
            }
            t
        })
        .collect();
    (images, targets)
}

pub struct GradientCheck {
    pub worst_relative: f64,
    pub checked: usize,
    pub live: usize,
    pub total: usize,
}

/// Analytic gradient of the training loss against central differences on
/// `n` parameters drawn among those the loss actually depends on.
pub fn gradient_check(norm: NormKind, side: usize, step: f64, n: usize) -> GradientCheck {
    let mut rng = rng(20);
    let spec = RegressorSpec {
        norm,
        ..RegressorSpec::tiny(side)
    };
    let mut model = Regressor::<f64>::build(&spec, &mut rng).unwrap();
    let (images, targets) = gradient_batch(&mut rng, side);
    let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
    let (_, grad) = loss_and_grad(&model, &refs, &targets).unwrap();
    let live: Vec<usize> = (0..model.count_params())
        .filter(|&i| grad[i].abs() > 1e-7)
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = live[rng.random_range(0..live.len())];
        let orig = model.params()[i];
        model.params_mut()[i] = orig + step;
        let up = loss_and_grad(&model, &refs, &targets).unwrap().0;
        model.params_mut()[i] = orig - step;
        let down = loss_and_grad(&model, &refs, &targets).unwrap().0;
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()));
    }
    GradientCheck {
        worst_relative: worst,
        checked: n,
        live: live.len(),
        total: model.count_params(),
    }
}
