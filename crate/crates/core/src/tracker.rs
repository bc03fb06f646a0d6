//! Pyramidal Lucas–Kanade point tracker (baseline).
//!
//! Each landmark is tracked frame to frame, coarse to fine, with iterative
//! Newton updates on a square window. Pyramids use the 5-tap binomial
//! filter before 2× decimation; gradients are central differences; all
//! off-grid reads are bilinear with border replication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::landmarks::{LandmarkSet, Point};
use crate::metrics::{pixel_errors_lenient, summarize_errors, ErrorTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Odd window side, px.
    pub window: usize,
    pub pyramid_levels: usize,
    pub max_iters: usize,
    /// Update norm below which iteration stops, px.
    pub epsilon: f64,
    /// Minimum eigenvalue of the window's normalized structure tensor.
    pub min_eigenvalue: f64,
    /// A final update larger than this (px) counts as divergence.
    pub max_final_step: f64,
    /// Mean absolute intensity residual above which a match is rejected.
    pub max_residual: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            window: 15,
            pyramid_levels: 3,
            max_iters: 30,
            epsilon: 0.01,
            min_eigenvalue: 1e-5,
            max_final_step: 0.5,
            max_residual: 0.1,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::Config("pyramid_levels must be >= 1".into()));
        }
        if self.max_iters < 1 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(
                "max_iters must be >= 1 and epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_image(img: &Image2D) -> Self {
        Plane {
            w: img.width(),
            h: img.height(),
            data: img.pixels().iter().map(|&v| v as f64).collect(),
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x0 + 1, y0) * fx;
        let bottom = self.at(x0, y0 + 1) * (1.0 - fx) + self.at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Binomial blur then keep every second pixel.
    fn decimate(&self) -> Plane {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.w, self.h);
        let mut rows = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = (0..5)
                    .map(|k| K[k] * self.at(x as isize + k as isize - 2, y as isize))
                    .sum();
            }
        }
        let rows = Plane { w, h, data: rows };
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut out = vec![0.0; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                out[y * nw + x] = (0..5)
                    .map(|k| K[k] * rows.at(2 * x as isize, 2 * y as isize + k as isize - 2))
                    .sum();
            }
        }
        Plane {
            w: nw,
            h: nh,
            data: out,
        }
    }

    fn gradients(&self) -> (Plane, Plane) {
        let mut gx = vec![0.0; self.data.len()];
        let mut gy = vec![0.0; self.data.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let i = y as usize * self.w + x as usize;
                gx[i] = 0.5 * (self.at(x + 1, y) - self.at(x - 1, y));
                gy[i] = 0.5 * (self.at(x, y + 1) - self.at(x, y - 1));
            }
        }
        (Plane { data: gx, ..*self }, Plane { data: gy, ..*self })
    }
}

struct Level {
    img: Plane,
    gx: Plane,
    gy: Plane,
}

fn pyramid(img: &Image2D, levels: usize) -> Vec<Level> {
    let mut planes = vec![Plane::from_image(img)];
    while planes.len() < levels {
        let next = planes.last().unwrap().decimate();
        planes.push(next);
    }
    planes
        .into_iter()
        .map(|img| {
            let (gx, gy) = img.gradients();
            Level { img, gx, gy }
        })
        .collect()
}

/// Why a point was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LostReason {
    LowTexture,
    Diverged,
    LeftImage,
    Residual,
}

/// Tracks one point from `prev` to `next`.
fn track_point(
    prev: &[Level],
    next: &[Level],
    p: Point,
    cfg: &TrackConfig,
) -> std::result::Result<Point, LostReason> {
    let r = (cfg.window / 2) as isize;
    let area = (cfg.window * cfg.window) as f64;
    let mut guess = (0.0, 0.0);
    let levels = prev.len();
    for l in (0..levels).rev() {
        let scale = (1u64 << l) as f64;
        let (ux, uy) = (p.x / scale, p.y / scale);
        let (pi, pj) = (&prev[l], &next[l]);
        let n = (2 * r + 1) as usize;
        let mut tmpl = Vec::with_capacity(n * n);
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (ux + dx as f64, uy + dy as f64);
                let ix = pi.gx.sample(x, y);
                let iy = pi.gy.sample(x, y);
                tmpl.push((pi.img.sample(x, y), ix, iy));
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        }
        let tr = (gxx + gyy) / area;
        let det_term = (((gxx - gyy) / area).powi(2) + 4.0 * (gxy / area).powi(2)).sqrt();
        let min_eig = 0.5 * (tr - det_term);
        if min_eig < cfg.min_eigenvalue {
            return Err(LostReason::LowTexture);
        }
        let det = gxx * gyy - gxy * gxy;
        let mut v = (0.0, 0.0);
        let mut last_step = 0.0;
        for _ in 0..cfg.max_iters {
            let (mut bx, mut by) = (0.0, 0.0);
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (t, ix, iy) = tmpl[k];
                    k += 1;
                    let diff = t - pj.img.sample(
                        ux + dx as f64 + guess.0 + v.0,
                        uy + dy as f64 + guess.1 + v.1,
                    );
                    bx += diff * ix;
                    by += diff * iy;
                }
            }
            let eta = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            v = (v.0 + eta.0, v.1 + eta.1);
            last_step = eta.0.hypot(eta.1);
            if !last_step.is_finite() {
                return Err(LostReason::Diverged);
            }
            if last_step < cfg.epsilon {
                break;
            }
        }
        if l == 0 {
            if last_step > cfg.max_final_step {
                return Err(LostReason::Diverged);
            }
            let q = Point::new(p.x + guess.0 + v.0, p.y + guess.1 + v.1);
            if !(q.x >= 0.0
                && q.y >= 0.0
                && q.x <= (pi.img.w - 1) as f64
                && q.y <= (pi.img.h - 1) as f64)
            {
                return Err(LostReason::LeftImage);
            }
            let mut k = 0;
            let mut residual = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    residual += (tmpl[k].0 - pj.img.sample(q.x + dx as f64, q.y + dy as f64)).abs();
                    k += 1;
                }
            }
            if residual / area > cfg.max_residual {
                return Err(LostReason::Residual);
            }
            return Ok(q);
        }
        guess = (2.0 * (guess.0 + v.0), 2.0 * (guess.1 + v.1));
    }
    unreachable!("level 0 always returns")
}

/// Tracks every present landmark of `init` through `frames`. Output
/// element 0 equals `init`; a lost point stays absent from then on.
pub fn lk_track(
    frames: &[Image2D],
    init: &LandmarkSet,
    cfg: &TrackConfig,
) -> Result<Vec<LandmarkSet>> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::InvariantViolation(format!(
            "tracking needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    let r = (cfg.window / 2) as f64;
    for id in init.present_ids() {
        let p = init.point(id);
        if p.x < r || p.y < r || p.x > (w - 1) as f64 - r || p.y > (h - 1) as f64 - r {
            return Err(Error::InitOutOfBounds { id, x: p.x, y: p.y });
        }
    }
    let mut out = vec![*init];
    let mut prev = pyramid(&frames[0], cfg.pyramid_levels);
    for frame in &frames[1..] {
        let next = pyramid(frame, cfg.pyramid_levels);
        let last = *out.last().unwrap();
        let mut cur = LandmarkSet::empty();
        for id in last.present_ids() {
            if let Ok(q) = track_point(&prev, &next, last.point(id), cfg) {
                if !q.is_origin() {
                    cur.set(id, q)?;
                }
            }
        }
        out.push(cur);
        prev = next;
    }
    Ok(out)
}

/// Error table of tracked against ground-truth landmarks, method
/// `"tracker"`. Lost points are excluded and counted.
pub fn tracking_error_table(tracked: &[LandmarkSet], gt: &[LandmarkSet]) -> Result<ErrorTable> {
    let (samples, counts) = pixel_errors_lenient(tracked, gt)?;
    let mut table = summarize_errors(&samples, "tracker");
    table.excluded = counts;
    Ok(table)
}

/// Number of landmarks lost over a tracked sequence.
pub fn lost_count(tracked: &[LandmarkSet]) -> usize {
    let first = &tracked[0];
    first
        .present_ids()
        .filter(|&id| !tracked.last().unwrap().is_present(id))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Spacing;
    use crate::landmarks::LandmarkId;

    fn id(i: u8) -> LandmarkId {
        LandmarkId::new(i).unwrap()
    }

    /// Smooth textured blob scene shifted by `(sx, sy)`.
    fn scene(w: usize, h: usize, sx: f64, sy: f64) -> Image2D {
        Image2D::from_fn(w, h, Spacing::isotropic(1.0), |x, y| {
            let (x, y) = (x as f64 - sx, y as f64 - sy);
            let blob = |cx: f64, cy: f64, s: f64| {
                (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp()
            };
            (0.6 * blob(40.0, 40.0, 5.0)
                + 0.4 * blob(46.0, 35.0, 3.0)
                + 0.3 * blob(35.0, 47.0, 4.0)) as f32
        })
    }

    #[test]
    fn zero_motion_is_exact() {
        let f = scene(96, 96, 0.0, 0.0);
        let init = LandmarkSet::empty()
            .with(id(1), Point::new(40.3, 41.7))
            .unwrap();
        let out = lk_track(&[f.clone(), f.clone(), f], &init, &TrackConfig::default()).unwrap();
        assert!(out.iter().all(|s| *s == init));
    }

    #[test]
    fn translation_recovered() {
        let frames: Vec<_> = (0..4)
            .map(|t| scene(96, 96, 2.0 * t as f64, 3.0 * t as f64))
            .collect();
        let init = LandmarkSet::empty()
            .with(id(1), Point::new(40.0, 40.0))
            .unwrap();
        let out = lk_track(&frames, &init, &TrackConfig::default()).unwrap();
        for (t, s) in out.iter().enumerate() {
            let p = s.get(id(1)).expect("tracked");
            assert!(
                (p.x - 40.0 - 2.0 * t as f64).abs() < 0.25
                    && (p.y - 40.0 - 3.0 * t as f64).abs() < 0.25,
                "frame {t}: {p:?}"
            );
        }
    }

    #[test]
    fn init_near_border_rejected() {
        let f = scene(64, 64, 0.0, 0.0);
        let init = LandmarkSet::empty()
            .with(id(2), Point::new(2.0, 30.0))
            .unwrap();
        assert!(matches!(
            lk_track(&[f.clone(), f], &init, &TrackConfig::default()),
            Err(Error::InitOutOfBounds { .. })
        ));
    }

    #[test]
    fn flat_window_is_lost() {
        let flat = Image2D::from_fn(64, 64, Spacing::isotropic(1.0), |_, _| 0.5);
        let init = LandmarkSet::empty()
            .with(id(3), Point::new(30.0, 30.0))
            .unwrap();
        let out = lk_track(&[flat.clone(), flat], &init, &TrackConfig::default()).unwrap();
        assert_eq!(out[1].count(), 0);
        assert_eq!(lost_count(&out), 1);
    }

    #[test]
    fn error_table_offset() {
        let gt: Vec<_> = (0..3)
            .map(|t| {
                LandmarkSet::empty()
                    .with(id(1), Point::new(10.0 + t as f64, 10.0))
                    .unwrap()
            })
            .collect();
        let tr: Vec<_> = (0..3)
            .map(|t| {
                LandmarkSet::empty()
                    .with(id(1), Point::new(13.0 + t as f64, 14.0))
                    .unwrap()
            })
            .collect();
        let t = tracking_error_table(&tr, &gt).unwrap();
        assert_eq!(t.method, "tracker");
        assert_eq!(t.row(id(1)).unwrap().cell(), "5.000 ± 0.000");
        assert_eq!(
            tracking_error_table(&gt, &gt)
                .unwrap()
                .row(id(1))
                .unwrap()
                .mean,
            0.0
        );
    }
}
