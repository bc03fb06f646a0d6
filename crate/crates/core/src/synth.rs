//! Synthetic long-axis cine phantoms with exact ground truth.
//!
//! Each view is drawn in a local frame anchored at the (stationary) LV apex:
//! `u` runs along the long axis towards the base, `v` across it. Bright
//! blood pools (ventricles, atria, aortic outflow) sit inside darker
//! myocardium on a textured background. Valve landmarks are the leaflet
//! hinge points at the ventricle/atrium junction and are marked by small
//! dark annulus knots.
//!
//! Motion is a raised-cosine contraction to end-systole and relaxation
//! back. For every valve the annulus midpoint is placed so that its distance
//! to the apex follows `L(t) = L(ED)·(1 + peak_strain·profile(t))`. In the
//! four-chamber view the lateral landmarks (6, 10) additionally move along
//! the axis by exactly the programmed MAPSE/TAPSE; their septal partners take
//! up the difference so the midpoint law still holds.
//!
//! The chamber layout differs per view (one ventricle, ventricle with
//! outflow tract, two ventricles) and each layout is left/right asymmetric,
//! so view and orientation are both recoverable from the pixels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{snap_to_u16_grid, Image2D, Spacing};
use crate::landmarks::{LandmarkSet, Point, Valve, ViewLabel, NUM_LANDMARKS};
use crate::sequence::{save_sequence, LandmarkSource, SequenceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub image_size: usize,
    pub frames: usize,
    pub view: ViewLabel,
    pub spacing_mm: f64,
    /// Endocardial LV apex, pixels `[x, y]`.
    pub apex: [f64; 2],
    /// Tilt of the long axis away from the image's downward vertical.
    pub axis_angle_deg: f64,
    /// Apex to mitral annulus midpoint at end-diastole.
    pub lv_length_px: f64,
    pub lv_half_width_px: f64,
    pub wall_px: f64,
    pub rv_half_width_px: f64,
    pub septum_px: f64,
    pub atrium_length_px: f64,
    /// Long-axis strain of every annulus midpoint at end-systole (negative).
    pub peak_strain: f64,
    /// Axial excursion of landmark 6 between ED and ES (4CH only).
    pub mapse_mm: f64,
    /// Axial excursion of landmark 10 between ED and ES (4CH only).
    pub tapse_mm: f64,
    /// End-systole position as a fraction of the cycle.
    pub es_fraction: f64,
    pub blood: f64,
    pub myocardium: f64,
    pub background: f64,
    pub texture_amp: f64,
    pub noise_sigma: f64,
    /// Leaflets swing open over the cycle.
    pub leaflet_motion: bool,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            image_size: 64,
            frames: 30,
            view: ViewLabel::Ch4,
            spacing_mm: 2.5,
            apex: [32.0, 9.0],
            axis_angle_deg: 0.0,
            lv_length_px: 34.0,
            lv_half_width_px: 8.0,
            wall_px: 2.5,
            rv_half_width_px: 5.5,
            septum_px: 2.5,
            atrium_length_px: 11.0,
            peak_strain: -0.15,
            mapse_mm: 12.0,
            tapse_mm: 15.0,
            es_fraction: 0.4,
            blood: 0.85,
            myocardium: 0.33,
            background: 0.16,
            texture_amp: 0.08,
            noise_sigma: 0.015,
            leaflet_motion: true,
        }
    }
}

impl PhantomConfig {
    pub fn for_view(view: ViewLabel) -> Self {
        let mut cfg = PhantomConfig {
            view,
            ..Default::default()
        };
        if view == ViewLabel::Ch4 {
            // Centre the two-ventricle layout.
            cfg.apex[0] += 0.5 * (cfg.septum_px + 2.0 * cfg.rv_half_width_px) * 0.8;
        }
        cfg
    }

    /// No motion and no per-frame noise: every frame is the same image.
    pub fn static_view(view: ViewLabel) -> Self {
        PhantomConfig {
            peak_strain: 0.0,
            mapse_mm: 0.0,
            tapse_mm: 0.0,
            noise_sigma: 0.0,
            leaflet_motion: false,
            ..Self::for_view(view)
        }
    }

    pub fn es_frame(&self) -> usize {
        ((self.es_fraction * self.frames as f64).round() as usize)
            .clamp(1, self.frames.saturating_sub(1).max(1))
    }

    /// Contraction profile in [0, 1]: 0 at ED (frame 0), 1 at ES.
    pub fn profile(&self, t: usize) -> f64 {
        let es = self.es_frame() as f64;
        let t = t as f64;
        let n = self.frames as f64;
        if t <= es {
            0.5 * (1.0 - (std::f64::consts::PI * t / es).cos())
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (t - es) / (n - es)).cos())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Geometry(m.to_string()));
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        if self.image_size < 32 {
            return bad("image_size must be >= 32");
        }
        if self.mapse_mm < 0.0 || self.tapse_mm < 0.0 {
            return bad("excursions must be non-negative");
        }
        if !(self.peak_strain > -1.0 && self.peak_strain <= 0.0) {
            return bad("peak_strain must lie in (-1, 0]");
        }
        if !(self.es_fraction > 0.0 && self.es_fraction < 1.0) {
            return bad("es_fraction must lie in (0, 1)");
        }
        if self.spacing_mm <= 0.0
            || self.lv_length_px <= 0.0
            || self.lv_half_width_px <= 0.0
            || self.wall_px <= 0.0
        {
            return bad("lengths must be positive");
        }
        Ok(())
    }
}

/// Long-axis frame anchored at the apex.
#[derive(Debug, Clone, Copy)]
struct Frame {
    apex: Point,
    axis: (f64, f64),
    perp: (f64, f64),
}

impl Frame {
    fn new(apex: [f64; 2], angle_deg: f64) -> Self {
        let th = angle_deg.to_radians();
        Frame {
            apex: Point::from(apex),
            axis: (th.sin(), th.cos()),
            perp: (th.cos(), -th.sin()),
        }
    }

    fn to_image(self, u: f64, v: f64) -> Point {
        Point::new(
            self.apex.x + u * self.axis.0 + v * self.perp.0,
            self.apex.y + u * self.axis.1 + v * self.perp.1,
        )
    }

    fn to_local(self, p: Point) -> (f64, f64) {
        let dx = p.x - self.apex.x;
        let dy = p.y - self.apex.y;
        (
            dx * self.axis.0 + dy * self.axis.1,
            dx * self.perp.0 + dy * self.perp.1,
        )
    }
}

/// Landmark positions in local `(u, v)` coordinates at end-diastole.
fn ed_layout(cfg: &PhantomConfig) -> [(f64, f64); NUM_LANDMARKS] {
    let l = cfg.lv_length_px;
    let hw = cfg.lv_half_width_px;
    let mut uv = [(0.0, 0.0); NUM_LANDMARKS];
    match cfg.view {
        ViewLabel::Ch2 => {
            uv[0] = (l, -hw);
            uv[1] = (l, hw);
        }
        ViewLabel::Ch3 => {
            uv[2] = (l, -hw);
            uv[3] = (l, -0.1 * hw);
            uv[6] = (l - 1.0, 0.25 * hw);
            uv[7] = (l - 3.0, hw);
        }
        ViewLabel::Ch4 => {
            let s = cfg.septum_px;
            let hr = cfg.rv_half_width_px;
            uv[4] = (l, -hw);
            uv[5] = (l, hw);
            uv[8] = (l - 2.0, -hw - s);
            uv[9] = (l - 2.0, -hw - s - 2.0 * hr);
        }
    }
    uv
}

/// Per-frame local landmark coordinates following the programmed motion.
fn landmark_trajectory(cfg: &PhantomConfig) -> Result<Vec<[(f64, f64); NUM_LANDMARKS]>> {
    let ed = ed_layout(cfg);
    let mut frames = vec![ed; cfg.frames];
    for &valve in cfg.view.valves() {
        let (a, b) = cfg.view.valve_pair(valve).unwrap();
        let (ua, va) = ed[a.index()];
        let (ub, vb) = ed[b.index()];
        let um0 = 0.5 * (ua + ub);
        let d = 0.5 * (va + vb);
        let l_ed = um0.hypot(d);
        let lateral = match (cfg.view, valve) {
            (ViewLabel::Ch4, Valve::Mitral) => Some((b, cfg.mapse_mm / cfg.spacing_mm)),
            (ViewLabel::Ch4, Valve::Tricuspid) => Some((b, cfg.tapse_mm / cfg.spacing_mm)),
            _ => None,
        };
        for (t, uv) in frames.iter_mut().enumerate() {
            let l_t = l_ed * (1.0 + cfg.peak_strain * cfg.profile(t));
            if l_t <= d.abs() {
                return Err(Error::Geometry(format!(
                    "{valve} annulus cannot reach strain {}",
                    cfg.peak_strain
                )));
            }
            let um = if t == 0 {
                um0
            } else {
                (l_t * l_t - d * d).sqrt()
            };
            match lateral {
                Some((lat, px)) => {
                    let other = if lat == a { b } else { a };
                    let u_lat = ed[lat.index()].0 - px * cfg.profile(t);
                    uv[lat.index()].0 = u_lat;
                    uv[other.index()].0 = 2.0 * um - u_lat;
                }
                None => {
                    uv[a.index()].0 = ua + (um - um0);
                    uv[b.index()].0 = ub + (um - um0);
                }
            }
        }
    }
    Ok(frames)
}

/// Ventricle cavity bounded by an elliptic apical cap and a piecewise
/// linear base through its annulus landmarks.
struct Ventricle {
    apex_u: f64,
    center_v: f64,
    half_width: f64,
    base: Vec<(f64, f64)>,
}

impl Ventricle {
    fn base_u(&self, v: f64) -> f64 {
        let pts = &self.base;
        let v = v.clamp(pts[0].1, pts[pts.len() - 1].1);
        for w in pts.windows(2) {
            let ((u0, v0), (u1, v1)) = (w[0], w[1]);
            if v <= v1 {
                let f = if v1 > v0 { (v - v0) / (v1 - v0) } else { 0.0 };
                return u0 + f * (u1 - u0);
            }
        }
        pts[pts.len() - 1].0
    }

    /// `grow` expands the shape outwards (myocardial shell); `left_extra`
    /// adds thickness on the `-v` side.
    fn contains(&self, u: f64, v: f64, grow: f64, left_extra: f64) -> bool {
        let dv = v - self.center_v;
        let hw = self.half_width + grow + if dv < 0.0 { left_extra } else { 0.0 };
        if dv.abs() >= hw {
            return false;
        }
        let base = self.base_u(v);
        if u >= base {
            return false;
        }
        let r = dv / hw;
        let top = self.apex_u - grow;
        let cap = top + (base - top) * (1.0 - (1.0 - r * r).sqrt());
        u > cap
    }
}

struct Ellipse {
    cu: f64,
    cv: f64,
    ru: f64,
    rv: f64,
}

impl Ellipse {
    fn inside(&self, u: f64, v: f64, grow: f64) -> bool {
        let a = (u - self.cu) / (self.ru + grow);
        let b = (v - self.cv) / (self.rv + grow);
        a * a + b * b < 1.0
    }
}

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
}

impl Segment {
    fn distance(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = du * du + dv * dv;
        let t = if len2 > 0.0 {
            (((u - self.a.0) * du + (v - self.a.1) * dv) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (u - self.a.0 - t * du).hypot(v - self.a.1 - t * dv)
    }
}

struct Scene {
    ventricles: Vec<(Ventricle, f64, f64)>,
    atria: Vec<Ellipse>,
    vessels: Vec<Segment>,
    leaflets: Vec<Segment>,
    knots: Vec<(f64, f64)>,
}

const KNOT_RADIUS: f64 = 1.3;

impl Scene {
    fn build(cfg: &PhantomConfig, uv: &[(f64, f64); NUM_LANDMARKS], t: usize) -> Scene {
        let lm = |id: u8| uv[id as usize - 1];
        let hw = cfg.lv_half_width_px;
        let wall = cfg.wall_px;
        let ra = cfg.atrium_length_px;
        let opening = if cfg.leaflet_motion {
            1.0 - cfg.profile(t)
        } else {
            1.0
        };
        let mut scene = Scene {
            ventricles: Vec::new(),
            atria: Vec::new(),
            vessels: Vec::new(),
            leaflets: Vec::new(),
            knots: Vec::new(),
        };
        let valve_pair = |scene: &mut Scene, a: (f64, f64), b: (f64, f64)| {
            let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
            let half = 0.5 * (a.0 - b.0).hypot(a.1 - b.1);
            for p in [a, b] {
                let tip = (
                    p.0 + 0.45 * (mid.0 - p.0) + (0.2 + 0.5 * opening) * half,
                    p.1 + 0.45 * (mid.1 - p.1),
                );
                scene.leaflets.push(Segment {
                    a: p,
                    b: tip,
                    half_width: 0.55,
                });
                scene.knots.push(p);
            }
            mid
        };
        match cfg.view {
            ViewLabel::Ch2 => {
                let (p1, p2) = (lm(1), lm(2));
                let mid = valve_pair(&mut scene, p1, p2);
                scene.ventricles.push((
                    Ventricle {
                        apex_u: 0.0,
                        center_v: 0.0,
                        half_width: hw,
                        base: vec![p1, p2],
                    },
                    wall,
                    0.7 * wall,
                ));
                scene.atria.push(Ellipse {
                    cu: mid.0 + 0.85 * ra,
                    cv: 0.3 * hw,
                    ru: ra,
                    rv: 0.85 * hw,
                });
                // Vessel cross-section beside the wall on the landmark-2 side.
                let c = (p2.0 - 5.0, p2.1 + 0.7 * wall + 3.2);
                scene.vessels.push(Segment {
                    a: c,
                    b: c,
                    half_width: 2.2,
                });
            }
            ViewLabel::Ch3 => {
                let (p3, p4, p7, p8) = (lm(3), lm(4), lm(7), lm(8));
                let mmid = valve_pair(&mut scene, p3, p4);
                let amid = valve_pair(&mut scene, p7, p8);
                scene.ventricles.push((
                    Ventricle {
                        apex_u: 0.0,
                        center_v: 0.0,
                        half_width: hw,
                        base: vec![p3, p4, p7, p8],
                    },
                    wall,
                    0.0,
                ));
                scene.atria.push(Ellipse {
                    cu: mmid.0 + 0.8 * ra,
                    cv: mmid.1 - 0.15 * hw,
                    ru: 0.9 * ra,
                    rv: 0.6 * hw,
                });
                let half = 0.5 * (p7.0 - p8.0).hypot(p7.1 - p8.1);
                let dir = (35f64.to_radians().cos(), 35f64.to_radians().sin());
                let end = (amid.0 + 24.0 * dir.0, amid.1 + 24.0 * dir.1);
                scene.vessels.push(Segment {
                    a: amid,
                    b: end,
                    half_width: half,
                });
            }
            ViewLabel::Ch4 => {
                let (p5, p6, p9, p10) = (lm(5), lm(6), lm(9), lm(10));
                let mmid = valve_pair(&mut scene, p5, p6);
                let tmid = valve_pair(&mut scene, p10, p9);
                let hr = cfg.rv_half_width_px;
                scene.ventricles.push((
                    Ventricle {
                        apex_u: 0.0,
                        center_v: 0.0,
                        half_width: hw,
                        base: vec![p5, p6],
                    },
                    wall,
                    cfg.septum_px - wall,
                ));
                scene.ventricles.push((
                    Ventricle {
                        apex_u: 0.3 * cfg.lv_length_px,
                        center_v: tmid.1,
                        half_width: hr,
                        base: vec![p10, p9],
                    },
                    0.6 * wall,
                    0.0,
                ));
                scene.atria.push(Ellipse {
                    cu: mmid.0 + 0.85 * ra,
                    cv: mmid.1 + 0.1 * hw,
                    ru: ra,
                    rv: 0.8 * hw,
                });
                scene.atria.push(Ellipse {
                    cu: tmid.0 + 0.8 * ra,
                    cv: tmid.1 - 0.1 * hr,
                    ru: 0.9 * ra,
                    rv: 0.95 * hr,
                });
            }
        }
        scene
    }

    /// Tissue intensity class at a local coordinate: 0 background,
    /// 1 myocardium/vessel wall, 2 blood, 3 annulus knot/leaflet.
    fn classify(&self, u: f64, v: f64) -> u8 {
        if self
            .knots
            .iter()
            .any(|&(ku, kv)| (u - ku).hypot(v - kv) < KNOT_RADIUS)
        {
            return 3;
        }
        if self
            .leaflets
            .iter()
            .any(|s| s.distance(u, v) < s.half_width)
        {
            return 3;
        }
        let blood = self
            .ventricles
            .iter()
            .any(|(vt, _, _)| vt.contains(u, v, 0.0, 0.0))
            || self.atria.iter().any(|e| e.inside(u, v, 0.0))
            || self.vessels.iter().any(|s| s.distance(u, v) < s.half_width);
        if blood {
            return 2;
        }
        let wall = self
            .ventricles
            .iter()
            .any(|(vt, w, extra)| vt.contains(u, v, *w, *extra))
            || self.atria.iter().any(|e| e.inside(u, v, 1.2))
            || self
                .vessels
                .iter()
                .any(|s| s.distance(u, v) < s.half_width + 1.2);
        if wall {
            1
        } else {
            0
        }
    }
}

/// Smooth value-noise texture in roughly [-1, 1].
fn value_noise<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let mut tex = vec![0.0; size * size];
    for (cells, amp) in [(6usize, 1.0), (12, 0.5)] {
        let grid: Vec<f64> = (0..(cells + 1) * (cells + 1))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let scale = cells as f64 / size as f64;
        for y in 0..size {
            for x in 0..size {
                let gx = x as f64 * scale;
                let gy = y as f64 * scale;
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
                let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
                let g = |i: usize, j: usize| grid[j.min(cells) * (cells + 1) + i.min(cells)];
                let top = g(ix, iy) * (1.0 - fx) + g(ix + 1, iy) * fx;
                let bottom = g(ix, iy + 1) * (1.0 - fx) + g(ix + 1, iy + 1) * fx;
                tex[y * size + x] += amp * (top * (1.0 - fy) + bottom * fy) / 1.5;
            }
        }
    }
    tex
}

/// Renders a labelled cine sequence for `cfg`.
pub fn generate_phantom_sequence<R: Rng + ?Sized>(
    cfg: &PhantomConfig,
    rng: &mut R,
) -> Result<SequenceRecord> {
    cfg.validate()?;
    let size = cfg.image_size;
    let frame = Frame::new(cfg.apex, cfg.axis_angle_deg);
    let trajectory = landmark_trajectory(cfg)?;

    let margin = 3.0;
    let inside = |p: Point| {
        p.x >= margin
            && p.y >= margin
            && p.x <= size as f64 - 1.0 - margin
            && p.y <= size as f64 - 1.0 - margin
    };
    if !inside(frame.apex) {
        return Err(Error::Geometry(format!(
            "apex {:?} outside the image",
            cfg.apex
        )));
    }
    let mut landmarks = Vec::with_capacity(cfg.frames);
    for uv in &trajectory {
        let mut set = LandmarkSet::empty();
        for &id in cfg.view.ids() {
            let (u, v) = uv[id.index()];
            let p = frame.to_image(u, v);
            if !inside(p) {
                return Err(Error::Geometry(format!(
                    "landmark {id} at ({:.1}, {:.1}) leaves the image",
                    p.x, p.y
                )));
            }
            set.set(id, p)?;
        }
        landmarks.push(set);
    }

    let texture = value_noise(size, rng);
    let noise =
        Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Geometry(e.to_string()))?;
    let levels = [
        cfg.background,
        cfg.myocardium,
        cfg.blood,
        0.55 * cfg.myocardium,
    ];
    let tex_gain = [1.0, 1.0, 0.5, 0.3];
    const SUB: [f64; 2] = [-0.25, 0.25];

    let spacing = Spacing::isotropic(cfg.spacing_mm);
    let mut frames = Vec::with_capacity(cfg.frames);
    for (t, uv) in trajectory.iter().enumerate() {
        let scene = Scene::build(cfg, uv, t);
        let mut img = Image2D::zeros(size, size, spacing);
        for y in 0..size {
            for x in 0..size {
                let tex = texture[y * size + x] * cfg.texture_amp;
                let mut acc = 0.0;
                for dy in SUB {
                    for dx in SUB {
                        let (u, v) = frame.to_local(Point::new(x as f64 + dx, y as f64 + dy));
                        let class = scene.classify(u, v) as usize;
                        acc += levels[class] * (1.0 + tex_gain[class] * tex);
                    }
                }
                let val = acc / 4.0
                    + if cfg.noise_sigma > 0.0 {
                        noise.sample(rng)
                    } else {
                        0.0
                    };
                img.set(x, y, val.clamp(0.0, 1.0) as f32);
            }
        }
        snap_to_u16_grid(&mut img);
        frames.push(img);
    }

    Ok(SequenceRecord {
        subject_id: "phantom".into(),
        view: cfg.view,
        source: LandmarkSource::Manual,
        frames,
        landmarks,
        apex: Some(frame.apex),
        ed_frame: 0,
        es_frame: Some(cfg.es_frame()),
    })
}

/// Ranges from which per-subject phantom parameters are drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomRanges {
    pub image_size: usize,
    pub frames: usize,
    pub spacing_mm: [f64; 2],
    pub apex_jitter_px: f64,
    pub axis_angle_deg: [f64; 2],
    pub lv_length_px: [f64; 2],
    pub lv_half_width_px: [f64; 2],
    pub wall_px: [f64; 2],
    pub rv_half_width_px: [f64; 2],
    pub peak_strain: [f64; 2],
    pub mapse_mm: [f64; 2],
    pub tapse_mm: [f64; 2],
    pub es_fraction: [f64; 2],
    pub blood: [f64; 2],
    pub myocardium: [f64; 2],
    pub background: [f64; 2],
    pub noise_sigma: [f64; 2],
}

impl Default for PhantomRanges {
    fn default() -> Self {
        PhantomRanges {
            image_size: 64,
            frames: 30,
            spacing_mm: [2.3, 2.7],
            apex_jitter_px: 2.5,
            axis_angle_deg: [-12.0, 12.0],
            lv_length_px: [31.0, 36.0],
            lv_half_width_px: [7.0, 9.0],
            wall_px: [2.0, 3.0],
            rv_half_width_px: [4.5, 6.0],
            peak_strain: [-0.20, -0.10],
            mapse_mm: [9.0, 15.0],
            tapse_mm: [13.0, 22.0],
            es_fraction: [0.35, 0.45],
            blood: [0.75, 0.95],
            myocardium: [0.25, 0.40],
            background: [0.10, 0.20],
            noise_sigma: [0.01, 0.025],
        }
    }
}

impl PhantomRanges {
    fn draw<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
        if r[1] > r[0] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    }

    /// Subject-level parameters shared by all three views.
    pub fn sample_subject<R: Rng + ?Sized>(&self, rng: &mut R) -> PhantomConfig {
        let d = |r, rng: &mut R| Self::draw(r, rng);
        PhantomConfig {
            image_size: self.image_size,
            frames: self.frames,
            spacing_mm: d(self.spacing_mm, rng),
            lv_length_px: d(self.lv_length_px, rng),
            lv_half_width_px: d(self.lv_half_width_px, rng),
            wall_px: d(self.wall_px, rng),
            rv_half_width_px: d(self.rv_half_width_px, rng),
            peak_strain: d(self.peak_strain, rng),
            mapse_mm: d(self.mapse_mm, rng),
            tapse_mm: d(self.tapse_mm, rng),
            es_fraction: d(self.es_fraction, rng),
            blood: d(self.blood, rng),
            myocardium: d(self.myocardium, rng),
            background: d(self.background, rng),
            noise_sigma: d(self.noise_sigma, rng),
            ..PhantomConfig::default()
        }
    }

    /// View-specific placement on top of the subject parameters.
    pub fn place_view<R: Rng + ?Sized>(
        &self,
        subject: &PhantomConfig,
        view: ViewLabel,
        rng: &mut R,
    ) -> PhantomConfig {
        let scale = self.image_size as f64 / 64.0;
        let mut cfg = PhantomConfig {
            view,
            ..subject.clone()
        };
        let centre = self.image_size as f64 / 2.0;
        let shift = if view == ViewLabel::Ch4 {
            0.4 * (cfg.septum_px + 2.0 * cfg.rv_half_width_px)
        } else {
            0.0
        };
        let j = self.apex_jitter_px * scale;
        cfg.apex = [
            centre + shift + rng.random_range(-j..=j),
            9.0 * scale + rng.random_range(-j..=j),
        ];
        cfg.axis_angle_deg = Self::draw(self.axis_angle_deg, rng);
        if scale != 1.0 {
            cfg.lv_length_px *= scale;
            cfg.lv_half_width_px *= scale;
            cfg.wall_px *= scale;
            cfg.rv_half_width_px *= scale;
            cfg.septum_px *= scale;
            cfg.atrium_length_px *= scale;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject: String,
    pub view: ViewLabel,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Index of a generated dataset, stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub subjects: Vec<String>,
    pub split: Split,
    pub sequences: Vec<ManifestEntry>,
    pub ranges: PhantomRanges,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::SchemaViolation(format!("{}: {e}", path.display())))
    }

    /// Sequence files of the named split (`"train"` or `"val"`), relative to
    /// `root`.
    pub fn split_files(&self, root: &Path, split: &str) -> Result<Vec<PathBuf>> {
        let subjects = match split {
            "train" => &self.split.train,
            "val" => &self.split.val,
            other => return Err(Error::Config(format!("unknown split {other:?}"))),
        };
        Ok(self
            .sequences
            .iter()
            .filter(|e| subjects.contains(&e.subject))
            .map(|e| root.join(&e.file))
            .collect())
    }
}

/// Options for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetOptions {
    pub n_subjects: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub ranges: PhantomRanges,
}

impl DatasetOptions {
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        DatasetOptions {
            n_subjects,
            seed,
            val_fraction: 0.2,
            ranges: PhantomRanges::default(),
        }
    }
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions::new(40, 7)
    }
}

/// Per-subject RNG stream, independent of how many subjects are generated.
fn subject_rng(seed: u64, subject: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 * 4 + lane);
    rng
}

/// Generates one sequence for a single subject/view directly (no files).
pub fn generate_subject_view(
    opts: &DatasetOptions,
    subject: usize,
    view: ViewLabel,
) -> Result<SequenceRecord> {
    let subject_cfg = opts
        .ranges
        .sample_subject(&mut subject_rng(opts.seed, subject, 3));
    let lane = ViewLabel::ALL.iter().position(|&v| v == view).unwrap() as u64;
    let mut rng = subject_rng(opts.seed, subject, lane);
    let cfg = opts.ranges.place_view(&subject_cfg, view, &mut rng);
    let mut rec = generate_phantom_sequence(&cfg, &mut rng)?;
    rec.subject_id = subject_name(subject);
    Ok(rec)
}

pub fn subject_name(index: usize) -> String {
    format!("subj-{index:04}")
}

/// Writes `n_subjects × 3` sequences plus `manifest.json` into `out_dir`.
pub fn generate_dataset(out_dir: &Path, opts: &DatasetOptions) -> Result<Manifest> {
    if opts.n_subjects == 0 {
        return Err(Error::Config("n_subjects must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must lie in [0, 1), got {}",
            opts.val_fraction
        )));
    }
    fs::create_dir_all(out_dir)?;
    let subjects: Vec<String> = (0..opts.n_subjects).map(subject_name).collect();
    let mut sequences = Vec::new();
    for (i, name) in subjects.iter().enumerate() {
        for view in ViewLabel::ALL {
            let rec = generate_subject_view(opts, i, view)?;
            let file = format!("{name}_{view}.json");
            save_sequence(&rec, &out_dir.join(&file))?;
            sequences.push(ManifestEntry {
                subject: name.clone(),
                view,
                file,
            });
        }
    }
    let n_val = if opts.n_subjects < 2 {
        0
    } else {
        ((opts.n_subjects as f64 * opts.val_fraction).round() as usize)
            .clamp(1, opts.n_subjects - 1)
    };
    let n_train = opts.n_subjects - n_val;
    let manifest = Manifest {
        schema_version: 1,
        seed: opts.seed,
        split: Split {
            train: subjects[..n_train].to_vec(),
            val: subjects[n_train..].to_vec(),
        },
        subjects,
        sequences,
        ranges: opts.ranges.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::LandmarkId;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn static_phantom_has_constant_landmarks() {
        for view in ViewLabel::ALL {
            let rec =
                generate_phantom_sequence(&PhantomConfig::static_view(view), &mut rng()).unwrap();
            assert!(rec.landmarks.iter().all(|l| *l == rec.landmarks[0]));
            assert!(rec.frames.iter().all(|f| f == &rec.frames[0]));
        }
    }

    #[test]
    fn views_label_their_own_landmarks() {
        for view in ViewLabel::ALL {
            let rec =
                generate_phantom_sequence(&PhantomConfig::for_view(view), &mut rng()).unwrap();
            rec.validate().unwrap();
            for l in &rec.landmarks {
                let ids: Vec<_> = l.present_ids().collect();
                assert_eq!(ids, view.ids());
            }
        }
    }

    #[test]
    fn profile_peaks_at_es() {
        let cfg = PhantomConfig {
            es_fraction: 14.0 / 30.0,
            ..Default::default()
        };
        assert_eq!(cfg.es_frame(), 14);
        assert_eq!(cfg.profile(0), 0.0);
        assert_eq!(cfg.profile(14), 1.0);
        let peak = (0..30)
            .max_by(|&a, &b| cfg.profile(a).total_cmp(&cfg.profile(b)))
            .unwrap();
        assert_eq!(peak, 14);
    }

    #[test]
    fn geometry_error_when_heart_leaves_image() {
        let cfg = PhantomConfig {
            lv_length_px: 70.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_phantom_sequence(&cfg, &mut rng()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn lateral_landmark_moves_by_programmed_excursion() {
        let cfg = PhantomConfig::for_view(ViewLabel::Ch4);
        let rec = generate_phantom_sequence(&cfg, &mut rng()).unwrap();
        let es = rec.es_frame.unwrap();
        let six = LandmarkId::new(6).unwrap();
        let d = rec.landmarks[0]
            .point(six)
            .distance(rec.landmarks[es].point(six))
            * cfg.spacing_mm;
        assert!((d - cfg.mapse_mm).abs() < 1e-9);
    }

    #[test]
    fn sampled_subjects_fit_the_image() {
        let opts = DatasetOptions::new(12, 99);
        for s in 0..12 {
            for view in ViewLabel::ALL {
                generate_subject_view(&opts, s, view).unwrap();
            }
        }
    }
}
