//! The nine-landmark palm configuration.
//!
//! Landmarks are stored in the owning image's normalized frame, `[-1, 1]`
//! on both axes with the align-corners pixel convention. Order is fixed:
//! L1..L3 along the finger bases (L1 on the index-finger side), L7 and L9 at
//! the palm/wrist border, and the derived midpoints L4, L5, L6, L8.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

pub const NUM_LANDMARKS: usize = 9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: [Point; NUM_LANDMARKS],
}

/// The five annotated landmarks; the rest are derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimaryLandmarks {
    pub l1: Point,
    pub l2: Point,
    pub l3: Point,
    pub l7: Point,
    pub l9: Point,
}

/// Builds L4 = mid(L1, L7), L8 = mid(L7, L9), L6 = mid(L3, L9) and then
/// L5 = mid(L8, L2).
pub fn derive_full_set(p: &PrimaryLandmarks) -> LandmarkSet {
    let l4 = p.l1.midpoint(p.l7);
    let l8 = p.l7.midpoint(p.l9);
    let l6 = p.l3.midpoint(p.l9);
    let l5 = l8.midpoint(p.l2);
    LandmarkSet {
        points: [p.l1, p.l2, p.l3, l4, l5, l6, p.l7, l8, p.l9],
    }
}

/// Index permutation applied when a hand is mirrored: L1<->L3, L4<->L6,
/// L7<->L9.
const MIRROR_ORDER: [usize; NUM_LANDMARKS] = [2, 1, 0, 5, 4, 3, 8, 7, 6];

impl LandmarkSet {
    /// The 3x3 lattice `{-1, 0, 1}^2` in row-major order.
    pub fn template() -> Self {
        let mut points = [Point::default(); NUM_LANDMARKS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = Point::new((i % 3) as f64 - 1.0, (i / 3) as f64 - 1.0);
        }
        Self { points }
    }

    pub fn primary(&self) -> PrimaryLandmarks {
        let p = &self.points;
        PrimaryLandmarks {
            l1: p[0],
            l2: p[1],
            l3: p[2],
            l7: p[6],
            l9: p[8],
        }
    }

    /// `(x1, y1, ..., x9, y9)`.
    pub fn to_flat(&self) -> [f64; 2 * NUM_LANDMARKS] {
        let mut out = [0.0; 2 * NUM_LANDMARKS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 2 * NUM_LANDMARKS {
            return Err(invalid(format!("expected 18 coordinates, got {}", v.len())));
        }
        let mut points = [Point::default(); NUM_LANDMARKS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = Point::new(v[2 * i], v[2 * i + 1]);
        }
        Ok(Self { points })
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            points: self.points.map(f),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    pub fn within_frame(&self) -> bool {
        self.points
            .iter()
            .all(|p| (-1.0..=1.0).contains(&p.x) && (-1.0..=1.0).contains(&p.y))
    }

    /// Mirror about `x = 0` and relabel so the set stays a right-hand
    /// configuration.
    pub fn mirrored(&self) -> Self {
        let mut points = [Point::default(); NUM_LANDMARKS];
        for (dst, &src) in points.iter_mut().zip(MIRROR_ORDER.iter()) {
            let p = self.points[src];
            *dst = Point::new(-p.x, p.y);
        }
        Self { points }
    }

    pub fn to_pixels(&self, width: usize, height: usize) -> Result<[Point; NUM_LANDMARKS]> {
        let mut out = [Point::default(); NUM_LANDMARKS];
        for (o, p) in out.iter_mut().zip(&self.points) {
            *o = denormalize(*p, width, height)?;
        }
        Ok(out)
    }

    pub fn from_pixels(px: &[Point; NUM_LANDMARKS], width: usize, height: usize) -> Result<Self> {
        let mut points = [Point::default(); NUM_LANDMARKS];
        for (o, p) in points.iter_mut().zip(px) {
            *o = normalize(*p, width, height)?;
        }
        Ok(Self { points })
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 {
        return Err(invalid(format!(
            "image must be at least 2x2 to normalize coordinates, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Pixel coordinates to the normalized frame: `2 px / (W - 1) - 1`.
pub fn normalize(px: Point, width: usize, height: usize) -> Result<Point> {
    check_dims(width, height)?;
    Ok(Point::new(
        2.0 * px.x / (width - 1) as f64 - 1.0,
        2.0 * px.y / (height - 1) as f64 - 1.0,
    ))
}

pub fn denormalize(p: Point, width: usize, height: usize) -> Result<Point> {
    check_dims(width, height)?;
    Ok(Point::new(
        (p.x + 1.0) * 0.5 * (width - 1) as f64,
        (p.y + 1.0) * 0.5 * (height - 1) as f64,
    ))
}

/// Mirrors a left hand into a right one.
pub fn flip_left_to_right(image: &Image, landmarks: &LandmarkSet) -> (Image, LandmarkSet) {
    (image.flip_horizontal(), landmarks.mirrored())
}

/// Normalized mean error in percent: mean point distance divided by the
/// side of the normalized frame (2.0).
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet) -> f64 {
    let mean = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(a, b)| a.dist(*b))
        .sum::<f64>()
        / NUM_LANDMARKS as f64;
    100.0 * mean / 2.0
}

/// One row of a five-point annotation file (pixel coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub path: PathBuf,
    pub primary: PrimaryLandmarks,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSpace {
    Normalized,
    Pixel,
}

impl CoordSpace {
    fn as_str(self) -> &'static str {
        match self {
            CoordSpace::Normalized => "normalized",
            CoordSpace::Pixel => "pixel",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "normalized" => Some(CoordSpace::Normalized),
            "pixel" => Some(CoordSpace::Pixel),
            _ => None,
        }
    }
}

/// A row of `landmarks.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRow {
    pub path: String,
    pub landmarks: LandmarkSet,
    pub space: CoordSpace,
}

pub fn landmark_csv_header() -> Vec<String> {
    let mut h = vec!["path".to_string()];
    for i in 1..=NUM_LANDMARKS {
        h.push(format!("x{i}"));
        h.push(format!("y{i}"));
    }
    h.push("space".to_string());
    h
}

pub fn write_landmark_csv(path: &Path, rows: &[LandmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(landmark_csv_header())?;
    for r in rows {
        let mut rec = vec![r.path.clone()];
        rec.extend(r.landmarks.to_flat().iter().map(|v| format!("{v:.17e}")));
        rec.push(r.space.as_str().to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses landmark CSV text. Line numbers in errors are 1-based and count
/// the header.
pub fn parse_landmark_csv(text: &str, origin: &Path) -> Result<Vec<LandmarkRow>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != landmark_csv_header() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            msg: "unexpected landmark CSV header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let perr = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != 2 * NUM_LANDMARKS + 2 {
            return Err(perr(format!("expected 20 fields, got {}", rec.len())));
        }
        let coords = (1..=2 * NUM_LANDMARKS)
            .map(|k| {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(format!("bad coordinate {:?}", &rec[k])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let space = CoordSpace::parse(rec[2 * NUM_LANDMARKS + 1].trim())
            .ok_or_else(|| perr(format!("unknown space {:?}", &rec[19])))?;
        rows.push(LandmarkRow {
            path: rec[0].to_string(),
            landmarks: LandmarkSet::from_flat(&coords)?,
            space,
        });
    }
    Ok(rows)
}

pub fn read_landmark_csv(path: &Path) -> Result<Vec<LandmarkRow>> {
    parse_landmark_csv(&std::fs::read_to_string(path)?, path)
}

const PRIMARY_LABELS: [usize; 5] = [1, 2, 3, 7, 9];

pub fn annotation_csv_header() -> Vec<String> {
    let mut h = vec!["path".to_string()];
    for i in PRIMARY_LABELS {
        h.push(format!("x{i}"));
        h.push(format!("y{i}"));
    }
    h.push("space".to_string());
    h.push("mask".to_string());
    h
}

pub fn write_annotation_csv(path: &Path, rows: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(annotation_csv_header())?;
    for r in rows {
        let p = &r.primary;
        let mut rec = vec![r.path.display().to_string()];
        for pt in [p.l1, p.l2, p.l3, p.l7, p.l9] {
            rec.push(format!("{:.17e}", pt.x));
            rec.push(format!("{:.17e}", pt.y));
        }
        rec.push("pixel".into());
        rec.push(
            r.mask
                .as_ref()
                .map(|m| m.display().to_string())
                .unwrap_or_default(),
        );
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_annotation_csv(text: &str, origin: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != annotation_csv_header() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            msg: "unexpected annotation CSV header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let perr = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != 13 {
            return Err(perr(format!("expected 13 fields, got {}", rec.len())));
        }
        let mut pts = [Point::default(); 5];
        for (k, pt) in pts.iter_mut().enumerate() {
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| perr(format!("bad pixel coordinate {s:?}")))
            };
            *pt = Point::new(parse(&rec[1 + 2 * k])?, parse(&rec[2 + 2 * k])?);
        }
        if &rec[11] != "pixel" {
            return Err(perr("annotation coordinates must be in pixel space".into()));
        }
        out.push(AnnotationRecord {
            path: PathBuf::from(&rec[0]),
            primary: PrimaryLandmarks {
                l1: pts[0],
                l2: pts[1],
                l3: pts[2],
                l7: pts[3],
                l9: pts[4],
            },
            mask: (!rec[12].is_empty()).then(|| PathBuf::from(&rec[12])),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt() -> impl Strategy<Value = Point> {
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y)| Point::new(x, y))
    }

    fn set() -> impl Strategy<Value = LandmarkSet> {
        proptest::array::uniform9(pt()).prop_map(|points| LandmarkSet { points })
    }

    #[test]
    fn midpoint_examples() {
        let o = Point::new(0.0, 0.0);
        let p = PrimaryLandmarks {
            l1: o,
            l2: Point::new(0.0, -1.0),
            l3: o,
            l7: Point::new(-1.0, 1.0),
            l9: Point::new(1.0, 1.0),
        };
        let s = derive_full_set(&p);
        assert_eq!(s.points[3], Point::new(-0.5, 0.5));
        assert_eq!(s.points[7], Point::new(0.0, 1.0));
        assert_eq!(s.points[4], Point::new(0.0, 0.0));

        let q = PrimaryLandmarks {
            l1: o,
            l7: Point::new(0.0, 1.0),
            ..p
        };
        assert_eq!(derive_full_set(&q).points[3], Point::new(0.0, 0.5));
    }

    #[test]
    fn degenerate_collapse() {
        let c = Point::new(0.3, -0.2);
        let s = derive_full_set(&PrimaryLandmarks {
            l1: c,
            l2: c,
            l3: c,
            l7: c,
            l9: c,
        });
        assert!(s.points.iter().all(|&p| p == c));
    }

    #[test]
    fn template_is_self_consistent() {
        let t = LandmarkSet::template();
        assert_eq!(derive_full_set(&t.primary()), t);
        assert_eq!(t.points[0], Point::new(-1.0, -1.0));
        assert_eq!(t.points[8], Point::new(1.0, 1.0));
        assert_eq!(t.mirrored(), t);
    }

    #[test]
    fn normalize_edges() {
        let (w, h) = (9, 5);
        assert_eq!(normalize(Point::new(0.0, 0.0), w, h).unwrap(), Point::new(-1.0, -1.0));
        assert_eq!(normalize(Point::new(8.0, 4.0), w, h).unwrap(), Point::new(1.0, 1.0));
        assert_eq!(normalize(Point::new(4.0, 2.0), w, h).unwrap(), Point::new(0.0, 0.0));
        assert!(normalize(Point::new(0.0, 0.0), 1, 5).is_err());
    }

    #[test]
    fn nme_examples() {
        let gt = LandmarkSet::template();
        assert_eq!(nme(&gt, &gt), 0.0);
        let shifted = gt.map(|p| Point::new(p.x + 0.02, p.y));
        assert!((nme(&shifted, &gt) - 1.0).abs() < 1e-12);
        let mut one = gt;
        one.points[4] = Point::new(0.18, 0.0);
        assert!((nme(&one, &gt) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.csv");
        let rows = vec![LandmarkRow {
            path: "images/a.png".into(),
            landmarks: LandmarkSet::template().map(|p| Point::new(p.x * 0.3, p.y * 0.7 + 1e-9)),
            space: CoordSpace::Normalized,
        }];
        write_landmark_csv(&path, &rows).unwrap();
        assert_eq!(read_landmark_csv(&path).unwrap(), rows);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("images/b.png,1,2,3\n");
        match parse_landmark_csv(&text, &path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn annotation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.csv");
        let rows = vec![AnnotationRecord {
            path: "images/a.png".into(),
            primary: PrimaryLandmarks {
                l1: Point::new(1.0, 2.0),
                l2: Point::new(3.0, 2.5),
                l3: Point::new(5.0, 2.0),
                l7: Point::new(1.5, 7.0),
                l9: Point::new(5.5, 7.0),
            },
            mask: Some("masks/a.png".into()),
        }];
        write_annotation_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(parse_annotation_csv(&text, &path).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn derive_is_idempotent(p in proptest::array::uniform5(pt())) {
            let prim = PrimaryLandmarks { l1: p[0], l2: p[1], l3: p[2], l7: p[3], l9: p[4] };
            let s = derive_full_set(&prim);
            prop_assert_eq!(derive_full_set(&s.primary()), s);
            prop_assert!(s.points[3].dist(p[0].midpoint(p[3])) < 1e-12);
        }

        #[test]
        fn mirror_preserves_nme_and_is_involution(a in set(), b in set()) {
            prop_assert!((nme(&a.mirrored(), &b.mirrored()) - nme(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(a.mirrored().mirrored(), a);
        }

        #[test]
        fn normalize_round_trip(x in 0.0f64..200.0, y in 0.0f64..90.0) {
            let p = Point::new(x, y);
            let back = denormalize(normalize(p, 201, 91).unwrap(), 201, 91).unwrap();
            prop_assert!(back.dist(p) < 1e-12);
        }
    }
}
