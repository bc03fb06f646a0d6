//! Stochastic image + landmark augmentation.
//!
//! [`augment_sample`] applies, in order: geometric ops (flips, transpose,
//! rotation, shift, composed into one affine resample), a free-form B-spline
//! deformation, k-space dropout, a smooth intensity shift and Gaussian
//! noise. All randomness comes from the caller's RNG.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::landmarks::{LandmarkSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KspaceMode {
    /// Every coefficient dropped independently.
    #[default]
    Coefficient,
    /// Whole phase-encode rows (fixed `ky`) dropped together.
    Lines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_flip_h: f64,
    pub p_flip_v: f64,
    pub p_transpose: f64,
    pub rot_max_deg: f64,
    /// Maximum shift as a fraction of the image side.
    pub shift_max_frac: f64,
    pub noise_sigma: f64,
    pub kspace_drop_rate: f64,
    pub kspace_mode: KspaceMode,
    pub intensity_shift_amp: f64,
    pub ffd_grid: usize,
    pub ffd_max_disp_px: f64,
    pub enable_geometric: bool,
    pub enable_ffd: bool,
    pub enable_kspace: bool,
    pub enable_intensity: bool,
    pub enable_noise: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip_h: 0.5,
            p_flip_v: 0.5,
            p_transpose: 0.5,
            rot_max_deg: 30.0,
            shift_max_frac: 0.1,
            noise_sigma: 0.05,
            kspace_drop_rate: 0.05,
            kspace_mode: KspaceMode::Coefficient,
            intensity_shift_amp: 0.1,
            ffd_grid: 4,
            ffd_max_disp_px: 4.0,
            enable_geometric: true,
            enable_ffd: true,
            enable_kspace: true,
            enable_intensity: true,
            enable_noise: true,
        }
    }
}

impl AugmentConfig {
    /// Every op disabled.
    pub fn none() -> Self {
        AugmentConfig {
            enable_geometric: false,
            enable_ffd: false,
            enable_kspace: false,
            enable_intensity: false,
            enable_noise: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "augment.{name} must lie in [0, 1], got {p}"
                )))
            }
        };
        prob("p_flip_h", self.p_flip_h)?;
        prob("p_flip_v", self.p_flip_v)?;
        prob("p_transpose", self.p_transpose)?;
        prob("kspace_drop_rate", self.kspace_drop_rate)?;
        if !(0.0..=180.0).contains(&self.rot_max_deg) {
            return Err(Error::Config(format!(
                "augment.rot_max_deg must lie in [0, 180], got {}",
                self.rot_max_deg
            )));
        }
        if self.ffd_grid < 2 {
            return Err(Error::Config("augment.ffd_grid must be >= 2".into()));
        }
        for (name, v) in [
            ("shift_max_frac", self.shift_max_frac),
            ("noise_sigma", self.noise_sigma),
            ("intensity_shift_amp", self.intensity_shift_amp),
            ("ffd_max_disp_px", self.ffd_max_disp_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "augment.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeomTransform {
    FlipH,
    FlipV,
    Transpose,
    /// Rotation about the image centre, degrees.
    Rotate(f64),
    Shift(f64, f64),
}

/// Affine map `p' = A p + b` on continuous pixel coordinates, together with
/// the output grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub out_width: usize,
    pub out_height: usize,
}

impl Affine {
    pub fn identity(width: usize, height: usize) -> Self {
        Affine {
            a: [[1.0, 0.0], [0.0, 1.0]],
            b: [0.0, 0.0],
            out_width: width,
            out_height: height,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a[0][0] * p.x + self.a[0][1] * p.y + self.b[0],
            self.a[1][0] * p.x + self.a[1][1] * p.y + self.b[1],
        )
    }

    pub fn inverse(&self) -> Affine {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(inv[0][0] * self.b[0] + inv[0][1] * self.b[1]),
            -(inv[1][0] * self.b[0] + inv[1][1] * self.b[1]),
        ];
        Affine {
            a: inv,
            b: t,
            out_width: self.out_width,
            out_height: self.out_height,
        }
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &Affine) -> Affine {
        let m = |i: usize, j: usize| next.a[i][0] * self.a[0][j] + next.a[i][1] * self.a[1][j];
        Affine {
            a: [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]],
            b: [
                next.a[0][0] * self.b[0] + next.a[0][1] * self.b[1] + next.b[0],
                next.a[1][0] * self.b[0] + next.a[1][1] * self.b[1] + next.b[1],
            ],
            out_width: next.out_width,
            out_height: next.out_height,
        }
    }
}

impl GeomTransform {
    /// Coordinate map for an input grid of `width`×`height`.
    pub fn affine(&self, width: usize, height: usize) -> Affine {
        let (w, h) = (width as f64, height as f64);
        match *self {
            GeomTransform::FlipH => Affine {
                a: [[-1.0, 0.0], [0.0, 1.0]],
                b: [w - 1.0, 0.0],
                ..Affine::identity(width, height)
            },
            GeomTransform::FlipV => Affine {
                a: [[1.0, 0.0], [0.0, -1.0]],
                b: [0.0, h - 1.0],
                ..Affine::identity(width, height)
            },
            GeomTransform::Transpose => Affine {
                a: [[0.0, 1.0], [1.0, 0.0]],
                b: [0.0, 0.0],
                out_width: height,
                out_height: width,
            },
            GeomTransform::Rotate(deg) => {
                let (s, c) = deg.to_radians().sin_cos();
                let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
                Affine {
                    a: [[c, -s], [s, c]],
                    b: [cx - c * cx + s * cy, cy - s * cx - c * cy],
                    ..Affine::identity(width, height)
                }
            }
            GeomTransform::Shift(dx, dy) => Affine {
                b: [dx, dy],
                ..Affine::identity(width, height)
            },
        }
    }
}

/// Resamples `img` under `t` (bilinear, zero fill) and maps landmarks
/// through the same coordinate map. Landmarks leaving the output grid
/// become absent.
pub fn apply_affine(img: &Image2D, lms: &LandmarkSet, t: &Affine) -> (Image2D, LandmarkSet) {
    let inv = t.inverse();
    let out = Image2D::from_fn(t.out_width, t.out_height, img.spacing(), |x, y| {
        let src = inv.apply(Point::new(x as f64, y as f64));
        img.sample_zero(src.x, src.y) as f32
    });
    let lms = lms.map_points(t.out_width, t.out_height, |p| t.apply(p));
    (out, lms)
}

pub fn apply_geometric(
    img: &Image2D,
    lms: &LandmarkSet,
    t: GeomTransform,
) -> (Image2D, LandmarkSet) {
    apply_affine(img, lms, &t.affine(img.width(), img.height()))
}

/// Samples a composed geometric transform from `cfg`. Transpose is only
/// drawn for square images so output dimensions never change.
pub fn sample_geometric<R: Rng + ?Sized>(
    cfg: &AugmentConfig,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Affine {
    let mut t = Affine::identity(width, height);
    let push = |g: GeomTransform, t: &mut Affine| *t = t.then(&g.affine(t.out_width, t.out_height));
    if rng.random_bool(cfg.p_flip_h) {
        push(GeomTransform::FlipH, &mut t);
    }
    if rng.random_bool(cfg.p_flip_v) {
        push(GeomTransform::FlipV, &mut t);
    }
    if rng.random_bool(cfg.p_transpose) && width == height {
        push(GeomTransform::Transpose, &mut t);
    }
    let angle = if cfg.rot_max_deg > 0.0 {
        rng.random_range(-cfg.rot_max_deg..=cfg.rot_max_deg)
    } else {
        0.0
    };
    if angle != 0.0 {
        push(GeomTransform::Rotate(angle), &mut t);
    }
    let (mx, my) = (
        cfg.shift_max_frac * width as f64,
        cfg.shift_max_frac * height as f64,
    );
    let dx = if mx > 0.0 {
        rng.random_range(-mx..=mx)
    } else {
        0.0
    };
    let dy = if my > 0.0 {
        rng.random_range(-my..=my)
    } else {
        0.0
    };
    if dx != 0.0 || dy != 0.0 {
        push(GeomTransform::Shift(dx, dy), &mut t);
    }
    t
}

/// Real part of the inverse DFT of the image spectrum with coefficients
/// randomly zeroed. The DC coefficient is always kept.
pub fn kspace_dropout<R: Rng + ?Sized>(
    img: &Image2D,
    rate: f64,
    mode: KspaceMode,
    rng: &mut R,
) -> Image2D {
    let px = img.pixels();
    if px.iter().all(|&v| v == px[0]) {
        // Pure DC spectrum: nothing can be dropped.
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut data: Vec<Complex<f64>> = px.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    fft2(&mut data, w, h, false);
    match mode {
        KspaceMode::Coefficient => {
            for (i, c) in data.iter_mut().enumerate() {
                if i != 0 && rng.random_bool(rate) {
                    *c = Complex::new(0.0, 0.0);
                }
            }
        }
        KspaceMode::Lines => {
            for ky in 1..h {
                if rng.random_bool(rate) {
                    data[ky * w..(ky + 1) * w].fill(Complex::new(0.0, 0.0));
                }
            }
        }
    }
    fft2(&mut data, w, h, true);
    let norm = (w * h) as f64;
    img.with_pixels(data.iter().map(|c| (c.re / norm) as f32).collect())
}

/// In-place unnormalized 2D DFT over a row-major `w`×`h` buffer.
pub fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Bilinear interpolation of a `g`×`g` lattice spanning the image corners.
fn lattice_sample(grid: &[f64], g: usize, w: usize, h: usize, x: f64, y: f64) -> f64 {
    let gx = if w > 1 {
        x * (g - 1) as f64 / (w - 1) as f64
    } else {
        0.0
    };
    let gy = if h > 1 {
        y * (g - 1) as f64 / (h - 1) as f64
    } else {
        0.0
    };
    let ix = (gx.floor() as usize).min(g - 2);
    let iy = (gy.floor() as usize).min(g - 2);
    let (fx, fy) = (gx - ix as f64, gy - iy as f64);
    let at = |i: usize, j: usize| grid[j * g + i];
    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
    let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Adds a smooth field (bilinear over a 4×4 grid of values in
/// `[-amp, amp]`) and clamps to [0, 1].
pub fn intensity_shift<R: Rng + ?Sized>(img: &Image2D, amp: f64, rng: &mut R) -> Image2D {
    if amp == 0.0 {
        return img.clone();
    }
    const G: usize = 4;
    let grid: Vec<f64> = (0..G * G).map(|_| rng.random_range(-amp..=amp)).collect();
    let (w, h) = (img.width(), img.height());
    Image2D::from_fn(w, h, img.spacing(), |x, y| {
        let s = lattice_sample(&grid, G, w, h, x as f64, y as f64);
        (img.get(x, y) as f64 + s).clamp(0.0, 1.0) as f32
    })
}

pub fn add_noise<R: Rng + ?Sized>(img: &Image2D, sigma: f64, rng: &mut R) -> Image2D {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    img.with_pixels(
        img.pixels()
            .iter()
            .map(|&v| (v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32)
            .collect(),
    )
}

/// Uniform cubic B-spline basis at fractional offset `t`.
fn bspline(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Cubic B-spline displacement field over a `grid`×`grid` control lattice
/// spanning the image. Out-of-range control indices are clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct FfdField {
    grid: usize,
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FfdField {
    pub fn random<R: Rng + ?Sized>(
        grid: usize,
        max_disp: f64,
        width: usize,
        height: usize,
        rng: &mut R,
    ) -> Self {
        let n = grid * grid;
        let mut draw = || {
            if max_disp > 0.0 {
                rng.random_range(-max_disp..=max_disp)
            } else {
                0.0
            }
        };
        let dx: Vec<f64> = (0..n).map(|_| draw()).collect();
        let dy: Vec<f64> = (0..n).map(|_| draw()).collect();
        FfdField {
            grid,
            width,
            height,
            dx,
            dy,
        }
    }

    pub fn displacement(&self, p: Point) -> (f64, f64) {
        let g = self.grid;
        let step = |extent: usize| {
            if extent > 1 {
                (extent - 1) as f64 / (g - 1) as f64
            } else {
                1.0
            }
        };
        let (u, v) = (p.x / step(self.width), p.y / step(self.height));
        let (iu, iv) = (u.floor(), v.floor());
        let (bu, bv) = (bspline(u - iu), bspline(v - iv));
        let clamp = |i: f64| (i.max(0.0) as usize).min(g - 1);
        let (mut sx, mut sy) = (0.0, 0.0);
        for (l, wv) in bv.iter().enumerate() {
            let j = clamp(iv - 1.0 + l as f64);
            for (k, wu) in bu.iter().enumerate() {
                let i = clamp(iu - 1.0 + k as f64);
                let wgt = wu * wv;
                sx += wgt * self.dx[j * g + i];
                sy += wgt * self.dy[j * g + i];
            }
        }
        (sx, sy)
    }

    /// Solves `q = p + D(q)`: the position that the backward warp
    /// `out(q) = in(q - D(q))` carries the content at `p` to.
    pub fn forward_point(&self, p: Point) -> Point {
        let mut q = p;
        for _ in 0..100 {
            let (dx, dy) = self.displacement(q);
            let next = Point::new(p.x + dx, p.y + dy);
            let done = next.distance(q) < 1e-10;
            q = next;
            if done {
                break;
            }
        }
        q
    }
}

/// Random B-spline free-form deformation of image and landmarks.
pub fn free_form_deform<R: Rng + ?Sized>(
    img: &Image2D,
    lms: &LandmarkSet,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Image2D, LandmarkSet) {
    let (w, h) = (img.width(), img.height());
    let field = FfdField::random(cfg.ffd_grid.max(2), cfg.ffd_max_disp_px, w, h, rng);
    if cfg.ffd_max_disp_px == 0.0 {
        return (img.clone(), *lms);
    }
    warp_ffd(img, lms, &field)
}

pub fn warp_ffd(img: &Image2D, lms: &LandmarkSet, field: &FfdField) -> (Image2D, LandmarkSet) {
    let (w, h) = (img.width(), img.height());
    let out = Image2D::from_fn(w, h, img.spacing(), |x, y| {
        let (dx, dy) = field.displacement(Point::new(x as f64, y as f64));
        img.sample_zero(x as f64 - dx, y as f64 - dy) as f32
    });
    (out, lms.map_points(w, h, |p| field.forward_point(p)))
}

/// Full augmentation chain in the fixed order geometric → FFD → k-space →
/// intensity → noise.
pub fn augment_sample<R: Rng + ?Sized>(
    img: &Image2D,
    lms: &LandmarkSet,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Image2D, LandmarkSet) {
    let (mut img, mut lms) = (img.clone(), *lms);
    if cfg.enable_geometric {
        let t = sample_geometric(cfg, img.width(), img.height(), rng);
        if t != Affine::identity(img.width(), img.height()) {
            (img, lms) = apply_affine(&img, &lms, &t);
        }
    }
    if cfg.enable_ffd {
        (img, lms) = free_form_deform(&img, &lms, cfg, rng);
    }
    if cfg.enable_kspace && cfg.kspace_drop_rate > 0.0 {
        img = kspace_dropout(&img, cfg.kspace_drop_rate, cfg.kspace_mode, rng);
    }
    if cfg.enable_intensity {
        img = intensity_shift(&img, cfg.intensity_shift_amp, rng);
    }
    if cfg.enable_noise {
        img = add_noise(&img, cfg.noise_sigma, rng);
    }
    (img, lms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Spacing;
    use crate::landmarks::LandmarkId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn spike(w: usize, h: usize, x: usize, y: usize) -> Image2D {
        let mut img = Image2D::zeros(w, h, Spacing::isotropic(1.0));
        img.set(x, y, 1.0);
        img
    }

    fn one(id: u8, x: f64, y: f64) -> LandmarkSet {
        LandmarkSet::empty()
            .with(LandmarkId::new(id).unwrap(), Point::new(x, y))
            .unwrap()
    }

    fn noise_image(w: usize, h: usize, seed: u64) -> Image2D {
        let mut r = rng(seed);
        Image2D::from_fn(w, h, Spacing::isotropic(1.0), |_, _| r.random::<f32>())
    }

    #[test]
    fn flip_and_transpose_examples() {
        let img = spike(64, 64, 10, 20);
        let l = one(1, 10.0, 20.0);
        let id = LandmarkId::new(1).unwrap();
        let (o, m) = apply_geometric(&img, &l, GeomTransform::FlipH);
        assert_eq!(m.point(id), Point::new(53.0, 20.0));
        assert_eq!(o.argmax(), (53, 20));
        let (o, m) = apply_geometric(&img, &l, GeomTransform::Transpose);
        assert_eq!(m.point(id), Point::new(20.0, 10.0));
        assert_eq!(o.argmax(), (20, 10));
        let (o, m) = apply_geometric(&img, &l, GeomTransform::Shift(5.0, -3.0));
        assert_eq!(m.point(id), Point::new(15.0, 17.0));
        assert_eq!(o.argmax(), (15, 17));
    }

    #[test]
    fn affine_inverse_and_composition() {
        let t = GeomTransform::Rotate(23.0)
            .affine(40, 40)
            .then(&GeomTransform::Shift(2.0, -1.5).affine(40, 40));
        let p = Point::new(7.25, 31.5);
        let back = t.inverse().apply(t.apply(p));
        assert!(back.distance(p) < 1e-12);
    }

    #[test]
    fn transpose_of_non_square_swaps_dims() {
        let img = Image2D::zeros(64, 32, Spacing::isotropic(1.0));
        let (o, _) = apply_geometric(&img, &LandmarkSet::empty(), GeomTransform::Transpose);
        assert_eq!((o.width(), o.height()), (32, 64));
    }

    #[test]
    fn landmark_pushed_out_becomes_absent() {
        let l = one(3, 60.0, 30.0);
        let (_, m) = apply_geometric(
            &Image2D::zeros(64, 64, Spacing::isotropic(1.0)),
            &l,
            GeomTransform::Shift(10.0, 0.0),
        );
        assert_eq!(m.count(), 0);
        assert!(m.sentinel_consistent());
    }

    #[test]
    fn kspace_rate_zero_is_identity() {
        let img = noise_image(16, 12, 1);
        let out = kspace_dropout(&img, 0.0, KspaceMode::Coefficient, &mut rng(2));
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn kspace_constant_image_exact() {
        let img = Image2D::from_fn(8, 8, Spacing::isotropic(1.0), |_, _| 0.375);
        for mode in [KspaceMode::Coefficient, KspaceMode::Lines] {
            assert_eq!(kspace_dropout(&img, 0.9, mode, &mut rng(3)), img);
        }
    }

    #[test]
    fn kspace_lines_keep_dc_row() {
        let img = noise_image(8, 8, 4);
        let out = kspace_dropout(&img, 1.0, KspaceMode::Lines, &mut rng(5));
        // Only ky = 0 survives: every column is constant.
        for x in 0..8 {
            for y in 1..8 {
                assert!((out.get(x, y) - out.get(x, 0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn intensity_shift_bounds() {
        let img = Image2D::from_fn(32, 32, Spacing::isotropic(1.0), |_, _| 0.5);
        let out = intensity_shift(&img, 0.1, &mut rng(6));
        assert!(out.pixels().iter().all(|&v| (0.4..=0.6).contains(&v)));
        let img = noise_image(8, 8, 7);
        let out = intensity_shift(&img, 0.1, &mut rng(8));
        let max = img
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(max <= 0.1 + 1e-6);
        assert_eq!(intensity_shift(&img, 0.0, &mut rng(8)), img);
    }

    #[test]
    fn noise_std_and_determinism() {
        let img = Image2D::zeros(128, 128, Spacing::isotropic(1.0));
        let out = add_noise(&img, 0.05, &mut rng(9));
        let n = out.pixels().len() as f64;
        let mean = out.pixels().iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (out
            .pixels()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!((0.025..=0.06).contains(&std), "std {std}");
        assert_eq!(out, add_noise(&img, 0.05, &mut rng(9)));
        assert_eq!(add_noise(&img, 0.0, &mut rng(9)), img);
    }

    #[test]
    fn bspline_partition_of_unity() {
        for i in 0..=20 {
            let s: f64 = bspline(i as f64 / 20.0).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ffd_zero_displacement_is_identity() {
        let img = noise_image(32, 32, 10);
        let l = one(5, 12.0, 9.5);
        let cfg = AugmentConfig {
            ffd_max_disp_px: 0.0,
            ..Default::default()
        };
        let (o, m) = free_form_deform(&img, &l, &cfg, &mut rng(11));
        assert_eq!(o, img);
        assert_eq!(m, l);
    }

    #[test]
    fn disabled_config_is_identity() {
        let img = noise_image(32, 32, 12);
        let l = one(2, 3.0, 4.0);
        let cfg = AugmentConfig {
            p_flip_h: 0.0,
            p_flip_v: 0.0,
            p_transpose: 0.0,
            rot_max_deg: 0.0,
            shift_max_frac: 0.0,
            noise_sigma: 0.0,
            kspace_drop_rate: 0.0,
            intensity_shift_amp: 0.0,
            ffd_max_disp_px: 0.0,
            ..Default::default()
        };
        let (o, m) = augment_sample(&img, &l, &cfg, &mut rng(13));
        assert_eq!(o, img);
        assert_eq!(m, l);
        let (o, m) = augment_sample(&img, &l, &AugmentConfig::none(), &mut rng(13));
        assert_eq!((o, m), (img, l));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig {
            p_flip_h: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AugmentConfig {
            rot_max_deg: 200.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AugmentConfig {
            ffd_grid: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        let parsed: AugmentConfig = serde_json::from_str(r#"{"kspace_mode": "lines"}"#).unwrap();
        assert_eq!(parsed.kspace_mode, KspaceMode::Lines);
        assert!(serde_json::from_str::<AugmentConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
