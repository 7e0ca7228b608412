//! Rendering one synthetic hand image.
//!
//! The hand is deformed by the thin-plate spline that carries the template
//! lattice onto the sample's landmarks. That same spline is what ROI
//! extraction evaluates, so sampling a rendered image at its ground-truth
//! landmarks reproduces the canonical texture up to resampling.

use ndgrad::RngState;

use super::texture::{in_hand, Background, PalmIdentity};
use crate::error::{invalid, Result};
use crate::image::{ncc, Image};
use crate::landmarks::{derive_full_set, LandmarkSet, Point, PrimaryLandmarks};
use crate::tps::{extract_roi, solve_tps, TpsTransform};

/// Per-sample nuisance factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nuisance {
    /// Standard deviation of the canonical perturbation of each primary
    /// landmark.
    pub perturbation: f64,
    pub rotation_deg: f64,
    /// Half-extent of the palm square as a fraction of the half-frame.
    pub scale: f64,
    pub translation: (f64, f64),
    pub gain: f64,
    /// Linear illumination slope along x and y.
    pub gradient: (f64, f64),
    pub background_id: u64,
    pub noise: f64,
    pub side: usize,
}

impl Nuisance {
    /// Undeformed palm filling the frame, no photometric change.
    pub fn zero(side: usize) -> Self {
        Self {
            perturbation: 0.0,
            rotation_deg: 0.0,
            scale: 1.0,
            translation: (0.0, 0.0),
            gain: 1.0,
            gradient: (0.0, 0.0),
            background_id: 0,
            noise: 0.0,
            side,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuisanceRanges {
    pub perturbation: f64,
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    pub translation: f64,
    pub gain: (f64, f64),
    pub gradient: f64,
    pub noise: (f64, f64),
    pub side: (usize, usize),
}

impl Default for NuisanceRanges {
    fn default() -> Self {
        Self {
            perturbation: 0.08,
            rotation_deg: 20.0,
            scale: (0.35, 0.5),
            translation: 0.1,
            gain: (0.75, 1.15),
            gradient: 0.08,
            noise: (0.0, 0.02),
            side: (40, 256),
        }
    }
}

impl NuisanceRanges {
    pub fn draw(&self, rng: &mut RngState) -> Nuisance {
        let t = self.translation;
        let (lo, hi) = (self.side.0 as f64, self.side.1.max(self.side.0) as f64);
        let side = (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp().round() as usize;
        Nuisance {
            perturbation: self.perturbation,
            rotation_deg: rng.uniform_range(-self.rotation_deg, self.rotation_deg),
            scale: rng.uniform_range(self.scale.0, self.scale.1),
            translation: (rng.uniform_range(-t, t), rng.uniform_range(-t, t)),
            gain: rng.uniform_range(self.gain.0, self.gain.1),
            gradient: (
                rng.uniform_range(-self.gradient, self.gradient),
                rng.uniform_range(-self.gradient, self.gradient),
            ),
            background_id: rng.next_u64(),
            noise: rng.uniform_range(self.noise.0, self.noise.1),
            side: side.clamp(self.side.0, self.side.1.max(self.side.0)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub image: Image,
    /// Hand coverage in `[0, 1]`, one channel.
    pub mask: Image,
    pub primary_px: PrimaryLandmarks,
    pub landmarks: LandmarkSet,
    pub identity: u64,
    pub nuisance: Nuisance,
}

const SUPERSAMPLE: usize = 3;
const MAX_TRIES: usize = 100;

/// `R(phi) p`, with `R = [[cos, sin], [-sin, cos]]`.
pub fn rotate(p: Point, deg: f64) -> Point {
    let (s, c) = deg.to_radians().sin_cos();
    Point::new(c * p.x + s * p.y, -s * p.x + c * p.y)
}

fn draw_landmarks(n: &Nuisance, rng: &mut RngState) -> LandmarkSet {
    let t = LandmarkSet::template();
    let mut jitter = |p: Point| {
        if n.perturbation == 0.0 {
            p
        } else {
            Point::new(
                p.x + n.perturbation * rng.normal(),
                p.y + n.perturbation * rng.normal(),
            )
        }
    };
    let canon = PrimaryLandmarks {
        l1: jitter(t.points[0]),
        l2: jitter(t.points[1]),
        l3: jitter(t.points[2]),
        l7: jitter(t.points[6]),
        l9: jitter(t.points[8]),
    };
    derive_full_set(&canon).map(|p| {
        let r = rotate(p, n.rotation_deg);
        Point::new(
            n.scale * r.x + n.translation.0,
            n.scale * r.y + n.translation.1,
        )
    })
}

/// Inverts the forward warp by Newton's method from the affine inverse.
struct Inverse {
    t: TpsTransform,
    ainv: [[f64; 2]; 2],
    ctrl: [Point; 9],
}

impl Inverse {
    fn new(t: TpsTransform) -> Option<Self> {
        let (a, b, c, d) = (t.a[1][0], t.a[2][0], t.a[1][1], t.a[2][1]);
        let det = a * d - b * c;
        if det.abs() < 1e-12 {
            return None;
        }
        Some(Self {
            t,
            ainv: [[d / det, -b / det], [-c / det, a / det]],
            ctrl: LandmarkSet::template().points,
        })
    }

    fn forward_with_jacobian(&self, q: Point) -> (Point, [[f64; 2]; 2]) {
        let a = &self.t.a;
        let mut f = [
            a[0][0] + a[1][0] * q.x + a[2][0] * q.y,
            a[0][1] + a[1][1] * q.x + a[2][1] * q.y,
        ];
        let mut j = [[a[1][0], a[2][0]], [a[1][1], a[2][1]]];
        for (i, c) in self.ctrl.iter().enumerate() {
            let (dx, dy) = (q.x - c.x, q.y - c.y);
            let r2 = dx * dx + dy * dy;
            if r2 <= 0.0 {
                continue;
            }
            let lr = r2.ln();
            let u = r2 * lr;
            let du = 2.0 * (lr + 1.0);
            for k in 0..2 {
                let w = self.t.w[i][k];
                f[k] += w * u;
                j[k][0] += w * du * dx;
                j[k][1] += w * du * dy;
            }
        }
        (Point::new(f[0], f[1]), j)
    }

    /// Canonical point mapped onto `x`, or `None` when Newton fails.
    fn solve(&self, x: Point, start: Option<Point>) -> Option<Point> {
        let a = &self.t.a;
        let mut q = start.unwrap_or_else(|| {
            let (rx, ry) = (x.x - a[0][0], x.y - a[0][1]);
            Point::new(
                self.ainv[0][0] * rx + self.ainv[0][1] * ry,
                self.ainv[1][0] * rx + self.ainv[1][1] * ry,
            )
        });
        for _ in 0..30 {
            let (f, j) = self.forward_with_jacobian(q);
            let (ex, ey) = (f.x - x.x, f.y - x.y);
            if ex.hypot(ey) < 1e-11 {
                return Some(q);
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-12 {
                return None;
            }
            let dq = (
                (j[1][1] * ex - j[0][1] * ey) / det,
                (-j[1][0] * ex + j[0][0] * ey) / det,
            );
            q = Point::new(q.x - dq.0, q.y - dq.1);
            if !q.is_finite() || q.x.abs() > 8.0 || q.y.abs() > 8.0 {
                return None;
            }
        }
        let (f, _) = self.forward_with_jacobian(q);
        (f.dist(x) < 1e-7).then_some(q)
    }
}

/// Renders the palm texture in the canonical frame on an `r x r` lattice
/// with the same supersampling footprint as the renderer.
pub fn render_canonical(identity: &PalmIdentity, r: usize) -> Image {
    let step = 2.0 / (r.max(2) - 1) as f64;
    let n = SUPERSAMPLE;
    let mut img = Image::zeros(r, r, 3);
    for y in 0..r {
        for x in 0..r {
            let mut acc = [0.0; 3];
            for j in 0..n {
                for i in 0..n {
                    let u = (x as f64 - 0.5 + (i as f64 + 0.5) / n as f64) * step - 1.0;
                    let v = (y as f64 - 0.5 + (j as f64 + 0.5) / n as f64) * step - 1.0;
                    let c = identity.albedo(u, v);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                img.set(k, x, y, (acc[k] / (n * n) as f64).clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

fn render_with(
    identity: &PalmIdentity,
    nuisance: &Nuisance,
    landmarks: LandmarkSet,
    rng: &mut RngState,
) -> Result<SyntheticSample> {
    let side = nuisance.side;
    if side < 8 {
        return Err(invalid(format!("image side {side} is too small")));
    }
    let inv = Inverse::new(solve_tps(&landmarks)?)
        .ok_or_else(|| invalid("degenerate landmark configuration"))?;
    let bg = Background::new(nuisance.background_id);
    let px_to_norm = |p: f64| 2.0 * p / (side - 1) as f64 - 1.0;

    // Canonical coordinates at pixel corners; sub-pixel positions are
    // interpolated from these.
    let nc = side + 1;
    let mut corners: Vec<Option<Point>> = Vec::with_capacity(nc * nc);
    for cy in 0..nc {
        let mut prev = None;
        for cx in 0..nc {
            let x = Point::new(px_to_norm(cx as f64 - 0.5), px_to_norm(cy as f64 - 0.5));
            let q = inv.solve(x, prev).or_else(|| inv.solve(x, None));
            corners.push(q);
            prev = q;
        }
    }

    let n = SUPERSAMPLE;
    let inv_n2 = 1.0 / (n * n) as f64;
    let mut image = Image::zeros(side, side, 3);
    let mut mask = Image::zeros(side, side, 1);
    for y in 0..side {
        for x in 0..side {
            let c00 = corners[y * nc + x];
            let c10 = corners[y * nc + x + 1];
            let c01 = corners[(y + 1) * nc + x];
            let c11 = corners[(y + 1) * nc + x + 1];
            let quad = match (c00, c10, c01, c11) {
                (Some(a), Some(b), Some(c), Some(d)) => Some((a, b, c, d)),
                _ => None,
            };
            let mut acc = [0.0; 3];
            let mut cover = 0.0;
            for j in 0..n {
                let fy = (j as f64 + 0.5) / n as f64;
                for i in 0..n {
                    let fx = (i as f64 + 0.5) / n as f64;
                    let canon = quad.map(|(a, b, c, d)| {
                        let top = (a.x + (b.x - a.x) * fx, a.y + (b.y - a.y) * fx);
                        let bot = (c.x + (d.x - c.x) * fx, c.y + (d.y - c.y) * fx);
                        Point::new(top.0 + (bot.0 - top.0) * fy, top.1 + (bot.1 - top.1) * fy)
                    });
                    let col = match canon {
                        Some(q) if in_hand(q.x, q.y) => {
                            cover += 1.0;
                            identity.albedo(q.x, q.y)
                        }
                        _ => bg.color(
                            px_to_norm(x as f64 - 0.5 + fx),
                            px_to_norm(y as f64 - 0.5 + fy),
                        ),
                    };
                    for k in 0..3 {
                        acc[k] += col[k];
                    }
                }
            }
            let (nx, ny) = (px_to_norm(x as f64), px_to_norm(y as f64));
            let light = nuisance.gain * (1.0 + nuisance.gradient.0 * nx + nuisance.gradient.1 * ny);
            for k in 0..3 {
                let noise = if nuisance.noise > 0.0 {
                    nuisance.noise * rng.normal()
                } else {
                    0.0
                };
                let v = light * acc[k] * inv_n2 + noise;
                image.set(k, x, y, v.clamp(0.0, 1.0) as f32);
            }
            mask.set(0, x, y, (cover * inv_n2) as f32);
        }
    }
    image.quantize();
    mask.quantize();
    let px = landmarks.to_pixels(side, side)?;
    Ok(SyntheticSample {
        image,
        mask,
        primary_px: PrimaryLandmarks {
            l1: px[0],
            l2: px[1],
            l3: px[2],
            l7: px[6],
            l9: px[8],
        },
        landmarks,
        identity: identity.id,
        nuisance: *nuisance,
    })
}

/// Renders one sample. Landmark perturbations that leave the frame are
/// redrawn, up to 100 times.
pub fn render_sample(
    identity: &PalmIdentity,
    nuisance: &Nuisance,
    rng: &mut RngState,
) -> Result<SyntheticSample> {
    for _ in 0..MAX_TRIES {
        let lm = draw_landmarks(nuisance, rng);
        if lm.within_frame() {
            return render_with(identity, nuisance, lm, rng);
        }
    }
    Err(invalid(format!(
        "no in-frame landmark draw after {MAX_TRIES} tries for {nuisance:?}"
    )))
}

/// Draws nuisances from `ranges` until the landmarks fit the frame.
pub fn render_random(
    identity: &PalmIdentity,
    ranges: &NuisanceRanges,
    rng: &mut RngState,
) -> Result<SyntheticSample> {
    for _ in 0..MAX_TRIES {
        let n = ranges.draw(rng);
        let lm = draw_landmarks(&n, rng);
        if lm.within_frame() {
            return render_with(identity, &n, lm, rng);
        }
    }
    Err(invalid(format!(
        "no in-frame nuisance draw after {MAX_TRIES} tries"
    )))
}

/// Side of the palm square in pixels, the resolution at which the ROI
/// carries the image's native detail.
pub fn native_roi_side(sample: &SyntheticSample) -> usize {
    let p = &sample.primary_px;
    let extent = 0.5 * (p.l1.dist(p.l3) + p.l1.dist(p.l7));
    (extent.round() as usize).max(8)
}

/// Normalized cross-correlation between the ROI sampled at the ground-truth
/// landmarks and the undeformed canonical texture, on luminance, at the
/// native resolution.
pub fn roi_round_trip_ncc(sample: &SyntheticSample, identity: &PalmIdentity) -> Result<f64> {
    let r = native_roi_side(sample);
    let roi = extract_roi(&sample.image, &sample.landmarks, r, r)?;
    let canon = render_canonical(identity, r);
    Ok(ncc(roi.to_gray().data(), canon.to_gray().data()))
}
