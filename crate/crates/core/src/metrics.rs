//! Landmark error tables and clinical measures (long-axis strain,
//! MAPSE/TAPSE).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkId, LandmarkSet, Point, Valve, ViewLabel};
use crate::sequence::SequenceRecord;

/// Per-landmark distance samples, px.
pub type ErrorSamples = BTreeMap<LandmarkId, Vec<f64>>;

fn check_aligned(pred: &[LandmarkSet], gt: &[LandmarkSet]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Euclidean error per landmark over frames where it is present. Presence
/// patterns must agree frame by frame.
pub fn pixel_errors(pred: &[LandmarkSet], gt: &[LandmarkSet]) -> Result<ErrorSamples> {
    check_aligned(pred, gt)?;
    let mut out = ErrorSamples::new();
    for (frame, (p, g)) in pred.iter().zip(gt).enumerate() {
        for id in LandmarkId::all() {
            match (p.get(id), g.get(id)) {
                (Some(a), Some(b)) => out.entry(id).or_default().push(a.distance(b)),
                (None, None) => {}
                _ => return Err(Error::PresenceMismatch { frame, id }),
            }
        }
    }
    Ok(out)
}

/// Presence disagreements tolerated by [`pixel_errors_lenient`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PresenceCounts {
    /// Present in the ground truth, absent in the prediction (lost/missed).
    pub missed: usize,
    /// Absent in the ground truth, present in the prediction.
    pub spurious: usize,
}

/// Like [`pixel_errors`] but skips presence disagreements and counts them.
pub fn pixel_errors_lenient(
    pred: &[LandmarkSet],
    gt: &[LandmarkSet],
) -> Result<(ErrorSamples, PresenceCounts)> {
    check_aligned(pred, gt)?;
    let mut out = ErrorSamples::new();
    let mut counts = PresenceCounts::default();
    for (p, g) in pred.iter().zip(gt) {
        for id in LandmarkId::all() {
            match (p.get(id), g.get(id)) {
                (Some(a), Some(b)) => out.entry(id).or_default().push(a.distance(b)),
                (None, Some(_)) => counts.missed += 1,
                (Some(_), None) => counts.spurious += 1,
                (None, None) => {}
            }
        }
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub id: LandmarkId,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl ErrorRow {
    pub fn cell(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    pub method: String,
    pub rows: Vec<ErrorRow>,
    /// Samples left out because of presence disagreements.
    pub excluded: PresenceCounts,
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population std per landmark; landmarks without samples are
/// left out.
pub fn summarize_errors(samples: &ErrorSamples, method: &str) -> ErrorTable {
    let rows = samples
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(&id, v)| {
            let (mean, std) = mean_std(v);
            ErrorRow {
                id,
                mean,
                std,
                count: v.len(),
            }
        })
        .collect();
    ErrorTable {
        method: method.to_string(),
        rows,
        excluded: PresenceCounts::default(),
    }
}

impl ErrorTable {
    pub fn row(&self, id: LandmarkId) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Unweighted mean of the per-landmark means.
    pub fn mean_of_means(&self) -> f64 {
        self.rows.iter().map(|r| r.mean).sum::<f64>() / self.rows.len() as f64
    }

    pub fn render_text(&self) -> String {
        render_comparison(std::slice::from_ref(self))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,landmark_id,valve,mean_px,std_px,count\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{}",
                self.method,
                r.id,
                r.id.valve().name(),
                r.mean,
                r.std,
                r.count
            );
        }
        out
    }
}

/// Aligned text table with one row per landmark and one `mean ± std`
/// column per method.
pub fn render_comparison(tables: &[ErrorTable]) -> String {
    let mut header = vec!["Landmark".to_string()];
    header.extend(tables.iter().map(|t| t.method.clone()));
    let mut lines = vec![header];
    for id in LandmarkId::all() {
        if tables.iter().all(|t| t.row(id).is_none()) {
            continue;
        }
        let mut line = vec![format!("{} ({})", id, id.valve().name())];
        line.extend(
            tables
                .iter()
                .map(|t| t.row(id).map_or_else(|| "-".to_string(), ErrorRow::cell)),
        );
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(
                out,
                "{}",
                widths
                    .iter()
                    .map(|&w| "-".repeat(w))
                    .collect::<Vec<_>>()
                    .join("  ")
            );
        }
    }
    let lost: Vec<String> = tables
        .iter()
        .filter(|t| t.excluded != PresenceCounts::default())
        .map(|t| {
            format!(
                "{}: {} missed, {} spurious",
                t.method, t.excluded.missed, t.excluded.spurious
            )
        })
        .collect();
    if !lost.is_empty() {
        let _ = writeln!(out, "excluded: {}", lost.join("; "));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrainCurve {
    pub valve: Valve,
    pub view: ViewLabel,
    pub values: Vec<f64>,
    pub reference_frame: usize,
}

fn view_for_valve(valve: Valve) -> ViewLabel {
    match valve {
        Valve::Mitral => ViewLabel::Ch4,
        Valve::Aortic => ViewLabel::Ch3,
        Valve::Tricuspid => ViewLabel::Ch4,
    }
}

fn landmark_at(lms: &[LandmarkSet], frame: usize, id: LandmarkId) -> Result<Point> {
    lms.get(frame)
        .and_then(|l| l.get(id))
        .ok_or(Error::MissingLandmark { frame, id })
}

/// `(L(t) - L(ed)) / L(ed)`, with `L` the physical distance from the apex
/// to the midpoint of the valve's annulus pair. Row and column spacing are
/// applied separately.
pub fn long_axis_strain(
    seq: &SequenceRecord,
    lms: &[LandmarkSet],
    valve: Valve,
) -> Result<StrainCurve> {
    let apex = seq.apex.ok_or(Error::MissingApex)?;
    let (a, b) = seq.view.valve_pair(valve).ok_or(Error::WrongView {
        expected: view_for_valve(valve),
        found: seq.view,
    })?;
    let spacing = seq.spacing();
    let ed = seq.ed_frame;
    let frames = lms.len();
    if ed >= frames {
        return Err(Error::MissingFrameIndex("ed_frame"));
    }
    let length = |t: usize| -> Result<f64> {
        let mid = landmark_at(lms, t, a)?.midpoint(landmark_at(lms, t, b)?);
        Ok(spacing.distance_mm(mid, apex))
    };
    let l_ed = length(ed)?;
    let mut values = Vec::with_capacity(frames);
    for t in 0..frames {
        values.push(if t == ed {
            0.0
        } else {
            (length(t)? - l_ed) / l_ed
        });
    }
    Ok(StrainCurve {
        valve,
        view: seq.view,
        values,
        reference_frame: ed,
    })
}

/// Per-landmark apex-distance strain curves (one curve per present
/// landmark of the view), for plotting.
pub fn landmark_strain_curves(
    seq: &SequenceRecord,
    lms: &[LandmarkSet],
) -> Result<BTreeMap<LandmarkId, Vec<f64>>> {
    let apex = seq.apex.ok_or(Error::MissingApex)?;
    let spacing = seq.spacing();
    let ed = seq.ed_frame;
    let mut out = BTreeMap::new();
    for &id in seq.view.ids() {
        let l_ed = spacing.distance_mm(landmark_at(lms, ed, id)?, apex);
        let mut curve = Vec::with_capacity(lms.len());
        for t in 0..lms.len() {
            curve.push(if t == ed {
                0.0
            } else {
                (spacing.distance_mm(landmark_at(lms, t, id)?, apex) - l_ed) / l_ed
            });
        }
        out.insert(id, curve);
    }
    Ok(out)
}

/// Most negative value and its frame; ties go to the earliest frame.
pub fn peak_strain(curve: &StrainCurve) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (t, &v) in curve.values.iter().enumerate() {
        if v < best.0 {
            best = (v, t);
        }
    }
    best
}

pub fn es_frame_estimate(curve: &StrainCurve) -> usize {
    peak_strain(curve).1
}

/// Lateral annular excursions in mm: landmark 6 (MAPSE) and landmark 10
/// (TAPSE) between ED and ES of a 4CH sequence.
pub fn mapse_tapse(seq: &SequenceRecord, lms: &[LandmarkSet]) -> Result<(f64, f64)> {
    if seq.view != ViewLabel::Ch4 {
        return Err(Error::WrongView {
            expected: ViewLabel::Ch4,
            found: seq.view,
        });
    }
    let es = seq.es_frame.ok_or(Error::MissingFrameIndex("es_frame"))?;
    let ed = seq.ed_frame;
    if es >= lms.len() {
        return Err(Error::MissingFrameIndex("es_frame"));
    }
    let spacing = seq.spacing();
    let excursion = |id: u8| -> Result<f64> {
        let id = LandmarkId::new(id)?;
        Ok(spacing.distance_mm(landmark_at(lms, ed, id)?, landmark_at(lms, es, id)?))
    };
    Ok((excursion(6)?, excursion(10)?))
}

pub const CLINICAL_CSV_HEADER: &str =
    "subject,view,frame,strain_mitral,strain_aortic,strain_tricuspid,mapse_mm,tapse_mm";

/// Clinical summary of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClinicalSummary {
    pub subject: String,
    pub view: ViewLabel,
    pub curves: Vec<StrainCurve>,
    pub peaks: Vec<(Valve, f64, usize)>,
    pub mapse_tapse_mm: Option<(f64, f64)>,
}

pub fn clinical_summary(
    seq: &SequenceRecord,
    lms: &[LandmarkSet],
    with_excursion: bool,
) -> Result<ClinicalSummary> {
    let mut curves = Vec::new();
    for &valve in seq.view.valves() {
        curves.push(long_axis_strain(seq, lms, valve)?);
    }
    let peaks = curves.iter().map(|c| {
        let (v, t) = peak_strain(c);
        (c.valve, v, t)
    });
    let mapse_tapse_mm = if with_excursion {
        Some(mapse_tapse(seq, lms)?)
    } else {
        None
    };
    Ok(ClinicalSummary {
        subject: seq.subject_id.clone(),
        view: seq.view,
        peaks: peaks.collect(),
        curves,
        mapse_tapse_mm,
    })
}

impl ClinicalSummary {
    /// Rows in [`CLINICAL_CSV_HEADER`] layout; valves not in the view are
    /// left empty, excursions are repeated on every row of a 4CH sequence.
    pub fn csv_rows(&self) -> String {
        let frames = self.curves.first().map_or(0, |c| c.values.len());
        let mut out = String::new();
        for t in 0..frames {
            let strain = |valve: Valve| {
                self.curves
                    .iter()
                    .find(|c| c.valve == valve)
                    .map_or(String::new(), |c| format!("{:.6}", c.values[t]))
            };
            let (m, tr) = self
                .mapse_tapse_mm
                .map_or((String::new(), String::new()), |(m, t)| {
                    (format!("{m:.4}"), format!("{t:.4}"))
                });
            let _ = writeln!(
                out,
                "{},{},{t},{},{},{},{m},{tr}",
                self.subject,
                self.view,
                strain(Valve::Mitral),
                strain(Valve::Aortic),
                strain(Valve::Tricuspid)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image2D, Spacing};
    use crate::sequence::LandmarkSource;

    fn id(i: u8) -> LandmarkId {
        LandmarkId::new(i).unwrap()
    }

    fn set(points: &[(u8, f64, f64)]) -> LandmarkSet {
        let mut s = LandmarkSet::empty();
        for &(i, x, y) in points {
            s.set(id(i), Point::new(x, y)).unwrap();
        }
        s
    }

    fn seq(view: ViewLabel, lms: Vec<LandmarkSet>, spacing: f64) -> SequenceRecord {
        let n = lms.len();
        SequenceRecord {
            subject_id: "s".into(),
            view,
            source: LandmarkSource::Manual,
            frames: vec![Image2D::zeros(200, 200, Spacing::isotropic(spacing)); n],
            landmarks: lms,
            apex: Some(Point::new(100.0, 10.0)),
            ed_frame: 0,
            es_frame: Some(n - 1),
        }
    }

    #[test]
    fn pixel_error_examples() {
        let a = vec![set(&[(1, 2.5, 1.5)])];
        let b = vec![set(&[(1, 1.0, 3.5)])];
        assert_eq!(pixel_errors(&a, &b).unwrap()[&id(1)], vec![2.5]);
        assert_eq!(pixel_errors(&a, &a).unwrap()[&id(1)], vec![0.0]);
        let c = vec![set(&[(1, 1.0, 3.5), (3, 3.0, 4.0)])];
        assert!(
            matches!(pixel_errors(&c, &b), Err(Error::PresenceMismatch { frame: 0, id }) if id.get() == 3)
        );
        let (s, counts) = pixel_errors_lenient(&c, &b).unwrap();
        assert_eq!((s[&id(1)].len(), counts.spurious, counts.missed), (1, 1, 0));
    }

    #[test]
    fn summary_formatting() {
        let mut s = ErrorSamples::new();
        s.insert(id(1), vec![3.0, 3.0, 3.0]);
        s.insert(id(2), vec![1.0, 3.0]);
        let t = summarize_errors(&s, "network");
        assert_eq!(t.row(id(1)).unwrap().cell(), "3.000 ± 0.000");
        assert_eq!(t.row(id(2)).unwrap().cell(), "2.000 ± 1.000");
        assert_eq!(format_mean_std(2.334, 1.398), "2.334 ± 1.398");
        let text = render_comparison(&[
            t.clone(),
            ErrorTable {
                method: "tracker".into(),
                ..t.clone()
            },
        ]);
        assert!(text.starts_with("Landmark"));
        assert!(text.contains("1 (mitral)"));
        assert_eq!(t.to_csv().lines().count(), 3);
    }

    #[test]
    fn strain_arithmetic() {
        // Midpoint at distance 100 then 85 from the apex.
        let lms = vec![
            set(&[
                (5, 90.0, 110.0),
                (6, 110.0, 110.0),
                (9, 50.0, 100.0),
                (10, 30.0, 100.0),
            ]),
            set(&[
                (5, 90.0, 95.0),
                (6, 110.0, 95.0),
                (9, 50.0, 90.0),
                (10, 30.0, 90.0),
            ]),
        ];
        let s = seq(ViewLabel::Ch4, lms.clone(), 1.0);
        let c = long_axis_strain(&s, &lms, Valve::Mitral).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!((c.values[1] + 0.15).abs() < 1e-12);
        assert_eq!(peak_strain(&c), (c.values[1], 1));
        let (mapse, _) = mapse_tapse(&s, &lms).unwrap();
        assert!((mapse - 15.0).abs() < 1e-12);
    }

    #[test]
    fn mapse_example_and_errors() {
        let lms = vec![
            set(&[(6, 100.0, 50.0), (10, 60.0, 40.0)]),
            set(&[(6, 100.0, 62.0), (10, 60.0, 40.0)]),
        ];
        let s = seq(ViewLabel::Ch4, lms.clone(), 1.25);
        let (m, t) = mapse_tapse(&s, &lms).unwrap();
        assert!((m - 15.0).abs() < 1e-12);
        assert_eq!(t, 0.0);
        let s2 = seq(ViewLabel::Ch2, lms.clone(), 1.25);
        assert!(matches!(
            mapse_tapse(&s2, &lms),
            Err(Error::WrongView { .. })
        ));
        let mut s3 = s.clone();
        s3.es_frame = None;
        assert!(matches!(
            mapse_tapse(&s3, &lms),
            Err(Error::MissingFrameIndex(_))
        ));
        let mut s4 = s.clone();
        s4.apex = None;
        assert!(matches!(
            long_axis_strain(&s4, &lms, Valve::Mitral),
            Err(Error::MissingApex)
        ));
        assert!(matches!(
            long_axis_strain(&s, &lms, Valve::Mitral),
            Err(Error::MissingLandmark { frame: 0, .. })
        ));
    }

    #[test]
    fn peak_and_es_examples() {
        let c = |v: Vec<f64>| StrainCurve {
            valve: Valve::Mitral,
            view: ViewLabel::Ch2,
            values: v,
            reference_frame: 0,
        };
        assert_eq!(peak_strain(&c(vec![0.0, -0.05, -0.15, -0.10])), (-0.15, 2));
        assert_eq!(peak_strain(&c(vec![0.0, -0.1, -0.1])), (-0.1, 1));
        assert_eq!(peak_strain(&c(vec![0.0, 0.0])), (0.0, 0));
        assert_eq!(es_frame_estimate(&c(vec![0.0, -0.1, -0.2, -0.1])), 2);
        assert_eq!(es_frame_estimate(&c(vec![0.0; 4])), 0);
    }

    #[test]
    fn anisotropic_spacing_per_component() {
        let lms = vec![
            set(&[(1, 90.0, 110.0), (2, 110.0, 110.0)]),
            set(&[(1, 90.0, 60.0), (2, 110.0, 60.0)]),
        ];
        let mut s = seq(ViewLabel::Ch2, lms.clone(), 1.0);
        s.frames = vec![
            Image2D::zeros(
                200,
                200,
                Spacing {
                    row_mm: 2.0,
                    col_mm: 1.0
                }
            );
            2
        ];
        let c = long_axis_strain(&s, &lms, Valve::Mitral).unwrap();
        assert!((c.values[1] + 0.5).abs() < 1e-12);
    }
}
