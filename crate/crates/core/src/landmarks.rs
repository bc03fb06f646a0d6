//! Landmark and view taxonomy.
//!
//! Ten valve landmarks are numbered 1..=10: mitral 1-6, aortic 7-8 and
//! tricuspid 9-10. Each long-axis view shows a fixed subset:
//!
//! | view | landmarks      |
//! |------|----------------|
//! | CH2  | 1, 2           |
//! | CH3  | 3, 4, 7, 8     |
//! | CH4  | 5, 6, 9, 10    |
//!
//! Coordinates are in pixels with `x` the column and `y` the row, origin at
//! the centre of the top-left pixel. The point `(0, 0)` is reserved as the
//! "absent" sentinel, which is also what the network emits for landmarks the
//! view does not define.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 10;

/// One of the ten valve landmarks, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LandmarkId(u8);

impl LandmarkId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=NUM_LANDMARKS as u8).contains(&id) {
            Ok(LandmarkId(id))
        } else {
            Err(Error::InvariantViolation(format!(
                "landmark id {id} outside 1..=10"
            )))
        }
    }

    /// Build from a zero-based array index. Panics if `index >= 10`.
    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_LANDMARKS, "landmark index {index} out of range");
        LandmarkId(index as u8 + 1)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all() -> impl Iterator<Item = LandmarkId> {
        (1..=NUM_LANDMARKS as u8).map(LandmarkId)
    }

    pub fn valve(self) -> Valve {
        match self.0 {
            1..=6 => Valve::Mitral,
            7 | 8 => Valve::Aortic,
            _ => Valve::Tricuspid,
        }
    }

    /// The only view in which this landmark is annotated.
    pub fn view(self) -> ViewLabel {
        match self.0 {
            1 | 2 => ViewLabel::Ch2,
            3 | 4 | 7 | 8 => ViewLabel::Ch3,
            _ => ViewLabel::Ch4,
        }
    }
}

impl TryFrom<u8> for LandmarkId {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        LandmarkId::new(value)
    }
}

impl From<LandmarkId> for u8 {
    fn from(id: LandmarkId) -> u8 {
        id.0
    }
}

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valve {
    Mitral,
    Aortic,
    Tricuspid,
}

impl Valve {
    pub const ALL: [Valve; 3] = [Valve::Mitral, Valve::Aortic, Valve::Tricuspid];

    pub fn name(self) -> &'static str {
        match self {
            Valve::Mitral => "mitral",
            Valve::Aortic => "aortic",
            Valve::Tricuspid => "tricuspid",
        }
    }
}

impl fmt::Display for Valve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Standard long-axis imaging plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewLabel {
    #[serde(rename = "CH2")]
    Ch2,
    #[serde(rename = "CH3")]
    Ch3,
    #[serde(rename = "CH4")]
    Ch4,
}

impl ViewLabel {
    pub const ALL: [ViewLabel; 3] = [ViewLabel::Ch2, ViewLabel::Ch3, ViewLabel::Ch4];

    pub fn ids(self) -> &'static [LandmarkId] {
        const CH2: [LandmarkId; 2] = [LandmarkId(1), LandmarkId(2)];
        const CH3: [LandmarkId; 4] = [LandmarkId(3), LandmarkId(4), LandmarkId(7), LandmarkId(8)];
        const CH4: [LandmarkId; 4] = [LandmarkId(5), LandmarkId(6), LandmarkId(9), LandmarkId(10)];
        match self {
            ViewLabel::Ch2 => &CH2,
            ViewLabel::Ch3 => &CH3,
            ViewLabel::Ch4 => &CH4,
        }
    }

    pub fn defines(self, id: LandmarkId) -> bool {
        id.view() == self
    }

    /// Landmark pair annotating `valve` in this view, if the view shows it.
    pub fn valve_pair(self, valve: Valve) -> Option<(LandmarkId, LandmarkId)> {
        let pair = |a, b| Some((LandmarkId(a), LandmarkId(b)));
        match (self, valve) {
            (ViewLabel::Ch2, Valve::Mitral) => pair(1, 2),
            (ViewLabel::Ch3, Valve::Mitral) => pair(3, 4),
            (ViewLabel::Ch3, Valve::Aortic) => pair(7, 8),
            (ViewLabel::Ch4, Valve::Mitral) => pair(5, 6),
            (ViewLabel::Ch4, Valve::Tricuspid) => pair(9, 10),
            _ => None,
        }
    }

    pub fn valves(self) -> &'static [Valve] {
        match self {
            ViewLabel::Ch2 => &[Valve::Mitral],
            ViewLabel::Ch3 => &[Valve::Mitral, Valve::Aortic],
            ViewLabel::Ch4 => &[Valve::Mitral, Valve::Tricuspid],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewLabel::Ch2 => "CH2",
            ViewLabel::Ch3 => "CH3",
            ViewLabel::Ch4 => "CH4",
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ViewLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CH2" | "2CH" => Ok(ViewLabel::Ch2),
            "CH3" | "3CH" => Ok(ViewLabel::Ch3),
            "CH4" | "4CH" => Ok(ViewLabel::Ch4),
            other => Err(Error::Config(format!("unknown view {other:?}"))),
        }
    }
}

pub fn landmarks_for_view(view: ViewLabel) -> BTreeSet<LandmarkId> {
    view.ids().iter().copied().collect()
}

/// A 2D pixel coordinate (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn is_origin(self) -> bool {
        self.x == 0.0 && self.y == 0.0
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Ten landmark slots with presence flags.
///
/// Absent landmarks are stored as exactly `(0, 0)` and a present landmark can
/// never sit at `(0, 0)`; the setters keep both sides of that rule in sync.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LandmarkSet {
    points: [Point; NUM_LANDMARKS],
    present: [bool; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Marks `id` present at `p`. Placing a landmark exactly on the sentinel
    /// is rejected.
    pub fn set(&mut self, id: LandmarkId, p: Point) -> Result<()> {
        if p.is_origin() {
            return Err(Error::ZeroSentinelConflict { frame: 0, id });
        }
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::InvariantViolation(format!(
                "landmark {id} has non-finite coordinates"
            )));
        }
        self.points[id.index()] = p;
        self.present[id.index()] = true;
        Ok(())
    }

    pub fn with(mut self, id: LandmarkId, p: Point) -> Result<Self> {
        self.set(id, p)?;
        Ok(self)
    }

    pub fn clear(&mut self, id: LandmarkId) {
        self.points[id.index()] = Point::ORIGIN;
        self.present[id.index()] = false;
    }

    pub fn get(&self, id: LandmarkId) -> Option<Point> {
        self.present[id.index()].then(|| self.points[id.index()])
    }

    pub fn is_present(&self, id: LandmarkId) -> bool {
        self.present[id.index()]
    }

    /// Raw slot value; `(0, 0)` for absent landmarks.
    pub fn point(&self, id: LandmarkId) -> Point {
        self.points[id.index()]
    }

    pub fn points(&self) -> &[Point; NUM_LANDMARKS] {
        &self.points
    }

    pub fn presence(&self) -> [bool; NUM_LANDMARKS] {
        self.present
    }

    pub fn present_ids(&self) -> impl Iterator<Item = LandmarkId> + '_ {
        LandmarkId::all().filter(|id| self.present[id.index()])
    }

    pub fn count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Regression target layout: `[x1, y1, x2, y2, ..., x10, y10]`.
    pub fn to_target(&self) -> [f64; 2 * NUM_LANDMARKS] {
        let mut out = [0.0; 2 * NUM_LANDMARKS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    /// Interprets raw network output: any coordinate pair whose norm is
    /// below `presence_threshold` px is read as the absent sentinel.
    pub fn from_regression(coords: &[f64], presence_threshold: f64) -> Self {
        assert_eq!(coords.len(), 2 * NUM_LANDMARKS);
        let mut set = LandmarkSet::empty();
        for id in LandmarkId::all() {
            let p = Point::new(coords[2 * id.index()], coords[2 * id.index() + 1]);
            if p.norm() >= presence_threshold
                && p.x.is_finite()
                && p.y.is_finite()
                && !p.is_origin()
            {
                set.points[id.index()] = p;
                set.present[id.index()] = true;
            }
        }
        set
    }

    /// Checks that every present landmark lies strictly inside a
    /// `width`×`height` image.
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for id in self.present_ids() {
            let p = self.points[id.index()];
            if !(p.x > 0.0 && p.x < width as f64 && p.y > 0.0 && p.y < height as f64) {
                return Err(Error::InvariantViolation(format!(
                    "landmark {id} at ({}, {}) lies outside the {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Applies `f` to every present landmark. Landmarks mapped outside the
    /// image (or onto the sentinel) become absent.
    pub fn map_points(
        &self,
        width: usize,
        height: usize,
        mut f: impl FnMut(Point) -> Point,
    ) -> Self {
        let mut out = LandmarkSet::empty();
        for id in self.present_ids() {
            let q = f(self.points[id.index()]);
            let inside = q.x > 0.0 && q.x < width as f64 && q.y > 0.0 && q.y < height as f64;
            if inside && q.x.is_finite() && q.y.is_finite() {
                out.points[id.index()] = q;
                out.present[id.index()] = true;
            }
        }
        out
    }

    /// Sentinel rule check: `present[i]` exactly when `points[i] != (0,0)`.
    pub fn sentinel_consistent(&self) -> bool {
        self.points
            .iter()
            .zip(&self.present)
            .all(|(p, &on)| on != p.is_origin())
    }
}
