//! Photometric (`ct`) and geometric (`at`) augmentation.

use ndgrad::RngState;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point};
use crate::synth::rotate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtRanges {
    pub saturation: (f64, f64),
    pub contrast: (f64, f64),
}

impl Default for CtRanges {
    fn default() -> Self {
        Self {
            saturation: (0.7, 1.3),
            contrast: (0.8, 1.2),
        }
    }
}

/// Scales colourfulness by `u` around each pixel's gray level, then
/// contrast by `v` around the image mean, and clamps to `[0, 1]`.
pub fn apply_ct(image: &Image, u: f64, v: f64) -> Image {
    let mut out = image.clone();
    if image.channels() == 3 {
        let n = image.width() * image.height();
        let d = out.data_mut();
        for i in 0..n {
            let (r, g, b) = (d[i] as f64, d[n + i] as f64, d[2 * n + i] as f64);
            let gray = 0.299 * r + 0.587 * g + 0.114 * b;
            d[i] = (gray + u * (r - gray)) as f32;
            d[n + i] = (gray + u * (g - gray)) as f32;
            d[2 * n + i] = (gray + u * (b - gray)) as f32;
        }
    }
    let mean = out.data().iter().map(|&x| x as f64).sum::<f64>() / out.data().len() as f64;
    for x in out.data_mut() {
        *x = (mean + v * (*x as f64 - mean)) as f32;
    }
    out.clamp01();
    out
}

pub fn augment_ct(image: &Image, ranges: &CtRanges, rng: &mut RngState) -> Image {
    let u = rng.uniform_range(ranges.saturation.0, ranges.saturation.1);
    let v = rng.uniform_range(ranges.contrast.0, ranges.contrast.1);
    apply_ct(image, u, v)
}

pub const AT_ROTATIONS: [f64; 6] = [-20.0, -5.0, 5.0, 20.0, -90.0, 90.0];
pub const AT_SCALES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];
/// Fractions of the image side.
pub const AT_SHIFTS: [f64; 6] = [-0.2, -0.15, -0.1, 0.1, 0.15, 0.2];

/// One geometric operation about the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AtOp {
    Rotate(f64),
    Scale(f64),
    /// Shift as fractions of the side along x and y.
    Translate(f64, f64),
}

impl AtOp {
    pub fn draw(rng: &mut RngState) -> Self {
        match rng.below(3) {
            0 => AtOp::Rotate(AT_ROTATIONS[rng.below(AT_ROTATIONS.len())]),
            1 => AtOp::Scale(AT_SCALES[rng.below(AT_SCALES.len())]),
            _ => AtOp::Translate(
                AT_SHIFTS[rng.below(AT_SHIFTS.len())],
                AT_SHIFTS[rng.below(AT_SHIFTS.len())],
            ),
        }
    }

    /// Where a normalized input point ends up.
    pub fn forward(self, p: Point) -> Point {
        match self {
            AtOp::Rotate(deg) => rotate(p, deg),
            AtOp::Scale(s) => Point::new(s * p.x, s * p.y),
            AtOp::Translate(dx, dy) => Point::new(p.x + 2.0 * dx, p.y + 2.0 * dy),
        }
    }

    fn inverse(self, p: Point) -> Point {
        match self {
            AtOp::Rotate(deg) => rotate(p, -deg),
            AtOp::Scale(s) => Point::new(p.x / s, p.y / s),
            AtOp::Translate(dx, dy) => Point::new(p.x - 2.0 * dx, p.y - 2.0 * dy),
        }
    }

    /// Applies the operation with zero fill. Quarter turns are exact pixel
    /// permutations and unit scale is the identity.
    pub fn apply(self, image: &Image) -> Image {
        match self {
            AtOp::Scale(s) if s == 1.0 => image.clone(),
            AtOp::Rotate(d) if d == 90.0 && image.width() == image.height() => image.rotate90(),
            AtOp::Rotate(d) if d == -90.0 && image.width() == image.height() => {
                image.rotate90().rotate90().rotate90()
            }
            _ => image.warp(image.width(), image.height(), |x, y| {
                let q = self.inverse(Point::new(x, y));
                (q.x, q.y)
            }),
        }
    }

    pub fn apply_landmarks(self, l: &LandmarkSet) -> LandmarkSet {
        l.map(|p| self.forward(p))
    }
}

pub fn augment_at(
    image: &Image,
    landmarks: Option<&LandmarkSet>,
    rng: &mut RngState,
) -> (Image, Option<LandmarkSet>, AtOp) {
    let op = AtOp::draw(rng);
    (op.apply(image), landmarks.map(|l| op.apply_landmarks(l)), op)
}
