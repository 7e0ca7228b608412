//! Identity textures, the hand silhouette and procedural backgrounds.
//!
//! Everything here is a continuous function of canonical coordinates, in
//! which the palm ROI is the square `[-1, 1]^2` with the nine template
//! landmarks on the 3x3 lattice. Fingers point towards negative `v`.

use ndgrad::rng::derive_seed;
use ndgrad::RngState;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Axis {
    /// `v = f(u)`.
    U,
    /// `u = f(v)`.
    V,
}

/// A curved crease: quadratic centre line with a Gaussian cross-section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crease {
    axis: Axis,
    c: [f64; 3],
    lo: f64,
    hi: f64,
    depth: f64,
    width: f64,
}

impl Crease {
    fn darkness(&self, u: f64, v: f64) -> f64 {
        let (s, t) = match self.axis {
            Axis::U => (u, v),
            Axis::V => (v, u),
        };
        // Soft fade over 0.15 beyond each end.
        let fade = smooth_window(s, self.lo, self.hi, 0.15);
        if fade == 0.0 {
            return 0.0;
        }
        let f = self.c[0] + self.c[1] * s + self.c[2] * s * s;
        let slope = self.c[1] + 2.0 * self.c[2] * s;
        let d = (t - f) / (1.0 + slope * slope).sqrt();
        let z = d / self.width;
        if z.abs() > 5.0 {
            return 0.0;
        }
        fade * self.depth * (-0.5 * z * z).exp()
    }
}

fn smooth_window(s: f64, lo: f64, hi: f64, ramp: f64) -> f64 {
    let a = ((s - (lo - ramp)) / ramp).clamp(0.0, 1.0);
    let b = (((hi + ramp) - s) / ramp).clamp(0.0, 1.0);
    let step = |x: f64| x * x * (3.0 - 2.0 * x);
    step(a) * step(b)
}

/// An oriented cosine component of the fine ridge texture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ridge {
    pub theta: f64,
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
}

/// The identity-defining texture parameters of one palm.
#[derive(Clone, Debug, PartialEq)]
pub struct PalmIdentity {
    pub id: u64,
    pub seed: u64,
    pub skin: [f64; 3],
    creases: Vec<Crease>,
    ridges: Vec<Ridge>,
}

impl PalmIdentity {
    pub fn new(id: u64, seed: u64) -> Self {
        let mut rng = RngState::new(derive_seed(&[seed, id, 0x1D]), 0);
        let mut r = |lo: f64, hi: f64| rng.uniform_range(lo, hi);
        let tone = r(0.85, 1.1);
        let skin = [0.82 * tone, r(0.58, 0.68) * tone, r(0.46, 0.56) * tone];
        let mut creases = vec![
            // Distal transverse (heart) line.
            Crease {
                axis: Axis::U,
                c: [r(-0.62, -0.38), r(-0.2, 0.2), r(-0.35, 0.25)],
                lo: r(-0.9, -0.4),
                hi: r(0.8, 1.05),
                depth: r(0.3, 0.45),
                width: r(0.035, 0.055),
            },
            // Proximal transverse (head) line.
            Crease {
                axis: Axis::U,
                c: [r(-0.15, 0.2), r(0.1, 0.45), r(-0.2, 0.3)],
                lo: r(-1.05, -0.85),
                hi: r(0.3, 0.9),
                depth: r(0.3, 0.45),
                width: r(0.035, 0.055),
            },
            // Thenar (life) line, curving around the thumb side.
            Crease {
                axis: Axis::V,
                c: [r(-0.55, -0.2), r(-0.25, 0.1), r(0.15, 0.45)],
                lo: r(-0.5, -0.1),
                hi: r(0.9, 1.05),
                depth: r(0.3, 0.45),
                width: r(0.035, 0.055),
            },
        ];
        let minor = 2 + (r(0.0, 3.0) as usize);
        for _ in 0..minor {
            let axis = if r(0.0, 1.0) < 0.5 { Axis::U } else { Axis::V };
            let centre = r(-0.8, 0.8);
            let half = r(0.25, 0.6);
            creases.push(Crease {
                axis,
                c: [r(-0.8, 0.8), r(-0.6, 0.6), r(-0.3, 0.3)],
                lo: centre - half,
                hi: centre + half,
                depth: r(0.12, 0.25),
                width: r(0.03, 0.045),
            });
        }
        let ridges = (0..10)
            .map(|_| Ridge {
                theta: r(0.0, std::f64::consts::PI),
                freq: r(1.0, 3.5),
                phase: r(0.0, std::f64::consts::TAU),
                amp: r(0.01, 0.03),
            })
            .collect();
        Self {
            id,
            seed,
            skin,
            creases,
            ridges,
        }
    }

    /// Multiplicative shading in roughly `[0.3, 1.1]`.
    pub fn luminance(&self, u: f64, v: f64) -> f64 {
        let dark: f64 = self.creases.iter().map(|c| c.darkness(u, v)).sum();
        let tau = std::f64::consts::TAU;
        let ridge: f64 = self
            .ridges
            .iter()
            .map(|r| {
                let s = u * r.theta.cos() + v * r.theta.sin();
                r.amp * (tau * r.freq * s + r.phase).cos()
            })
            .sum();
        (1.0 - dark.min(0.7) + ridge).max(0.0)
    }

    pub fn albedo(&self, u: f64, v: f64) -> [f64; 3] {
        let l = self.luminance(u, v);
        self.skin.map(|s| s * l)
    }
}

fn capsule_dist(u: f64, v: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((u - a.0) * dx + (v - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (u - a.0 - t * dx).hypot(v - a.1 - t * dy)
}

/// Whether a canonical point lies on the hand: palm, four fingers, thumb and
/// wrist.
pub fn in_hand(u: f64, v: f64) -> bool {
    // Palm: rounded rectangle that strictly contains the ROI square.
    let (hx, hy0, hy1, rad) = (1.15, -1.1, 1.15, 0.12);
    let cx = u.clamp(-hx + rad, hx - rad);
    let cy = v.clamp(hy0 + rad, hy1 - rad);
    if (u - cx).hypot(v - cy) <= rad {
        return true;
    }
    // Wrist.
    if u.abs() <= 0.85 && v >= 1.0 && v <= 3.5 {
        return true;
    }
    const FINGERS: [(f64, f64, f64); 4] = [
        (-0.78, -2.55, 0.23),
        (-0.26, -2.8, 0.24),
        (0.26, -2.7, 0.23),
        (0.78, -2.3, 0.2),
    ];
    for (x, tip, r) in FINGERS {
        if capsule_dist(u, v, (x, -1.0), (x * 1.1, tip)) <= r {
            return true;
        }
    }
    capsule_dist(u, v, (-1.0, 0.4), (-1.95, -0.5)) <= 0.28
}

/// A cluttered background evaluated in image-normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    base: [f64; 3],
    grad: [f64; 2],
    blobs: Vec<([f64; 2], [f64; 2], [f64; 3])>,
    stripes: (f64, f64, f64),
}

impl Background {
    pub fn new(id: u64) -> Self {
        let mut rng = RngState::new(derive_seed(&[id, 0xB6]), 0);
        let mut r = |lo: f64, hi: f64| rng.uniform_range(lo, hi);
        let base = [r(0.1, 0.9), r(0.1, 0.9), r(0.1, 0.9)];
        let grad = [r(-0.2, 0.2), r(-0.2, 0.2)];
        let n = 3 + r(0.0, 4.0) as usize;
        let blobs = (0..n)
            .map(|_| {
                (
                    [r(-1.2, 1.2), r(-1.2, 1.2)],
                    [r(0.1, 0.6), r(0.1, 0.6)],
                    [r(0.0, 1.0), r(0.0, 1.0), r(0.0, 1.0)],
                )
            })
            .collect();
        let stripes = (r(0.0, 3.2), r(2.0, 8.0), r(0.0, 0.12));
        Self {
            base,
            grad,
            blobs,
            stripes,
        }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        let g = self.grad[0] * x + self.grad[1] * y;
        let (th, f, a) = self.stripes;
        let s = a * (std::f64::consts::TAU * f * (x * th.cos() + y * th.sin())).cos();
        for ch in c.iter_mut() {
            *ch += g + s;
        }
        for (ctr, rad, col) in &self.blobs {
            let d = ((x - ctr[0]) / rad[0]).powi(2) + ((y - ctr[1]) / rad[1]).powi(2);
            if d < 1.0 {
                let w = 0.8 * (1.0 - d);
                for k in 0..3 {
                    c[k] = c[k] * (1.0 - w) + col[k] * w;
                }
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_deterministic_and_distinct() {
        let a = PalmIdentity::new(3, 9);
        assert_eq!(a, PalmIdentity::new(3, 9));
        let b = PalmIdentity::new(4, 9);
        assert_ne!(a, b);
        assert_eq!(a.luminance(0.1, -0.3).to_bits(), PalmIdentity::new(3, 9).luminance(0.1, -0.3).to_bits());
    }

    #[test]
    fn palm_square_is_inside_hand() {
        for i in 0..=20 {
            for j in 0..=20 {
                let (u, v) = (i as f64 / 10.0 - 1.0, j as f64 / 10.0 - 1.0);
                assert!(in_hand(u, v));
            }
        }
        assert!(!in_hand(2.5, 0.0));
        assert!(!in_hand(0.0, -3.6));
    }

    #[test]
    fn luminance_is_bounded() {
        let id = PalmIdentity::new(1, 2);
        for i in 0..50 {
            for j in 0..50 {
                let l = id.luminance(i as f64 / 25.0 - 1.0, j as f64 / 25.0 - 1.0);
                assert!((0.0..=1.5).contains(&l));
            }
        }
    }
}
