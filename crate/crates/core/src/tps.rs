//! Thin-plate-spline spatial transformer.
//!
//! The warp maps normalized ROI coordinates onto normalized input-image
//! coordinates. Its control points in the ROI frame are the fixed 3x3
//! template, so the 12x12 interpolation system is factorized once; solving
//! for a new set of targets is a matrix product, and so is evaluating the
//! warp on a fixed output lattice. Both products are exposed as graph ops.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndgrad::linalg::Lu;
use ndgrad::{Graph, Real, Var};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};

/// Diagonal regularizer used only when the plain system is singular.
pub const RIDGE: f64 = 1e-8;

const N: usize = NUM_LANDMARKS;
const SYS: usize = N + 3;

/// `U(r) = r^2 log r^2`, written in terms of the squared distance.
#[inline]
pub fn kernel_sq(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// The regular 3x3 lattice of control points in the ROI frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemplateGrid {
    pub points: [Point; N],
}

impl Default for TemplateGrid {
    fn default() -> Self {
        Self {
            points: LandmarkSet::template().points,
        }
    }
}

impl TemplateGrid {
    /// The augmented system `[[K + ridge I, P], [P^T, 0]]`, row-major.
    pub fn system_matrix(&self, ridge: f64) -> Vec<f64> {
        let mut m = vec![0.0; SYS * SYS];
        for i in 0..N {
            let pi = self.points[i];
            for j in 0..N {
                let pj = self.points[j];
                let r2 = (pi.x - pj.x).powi(2) + (pi.y - pj.y).powi(2);
                m[i * SYS + j] = kernel_sq(r2) + if i == j { ridge } else { 0.0 };
            }
            let p = [1.0, pi.x, pi.y];
            for k in 0..3 {
                m[i * SYS + N + k] = p[k];
                m[(N + k) * SYS + i] = p[k];
            }
        }
        m
    }

    /// `[U(|q - t_1|), ..., U(|q - t_9|), 1, x, y]`.
    pub fn basis_row(&self, q: Point) -> [f64; SYS] {
        let mut row = [0.0; SYS];
        for (r, t) in row.iter_mut().zip(&self.points) {
            *r = kernel_sq((q.x - t.x).powi(2) + (q.y - t.y).powi(2));
        }
        row[N] = 1.0;
        row[N + 1] = q.x;
        row[N + 2] = q.y;
        row
    }
}

/// Solved warp: nonlinear weights `w` and affine part `a` (rows: constant,
/// x, y), one column per output coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpsTransform {
    pub w: [[f64; 2]; N],
    pub a: [[f64; 2]; 3],
}

impl TpsTransform {
    fn from_coeffs(c: &[f64]) -> Self {
        let mut w = [[0.0; 2]; N];
        let mut a = [[0.0; 2]; 3];
        for i in 0..N {
            w[i] = [c[2 * i], c[2 * i + 1]];
        }
        for k in 0..3 {
            a[k] = [c[2 * (N + k)], c[2 * (N + k) + 1]];
        }
        Self { w, a }
    }

    pub fn eval(&self, q: Point) -> Point {
        let row = TemplateGrid::default().basis_row(q);
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let nl: f64 = (0..N).map(|i| row[i] * self.w[i][d]).sum();
            *o = nl + self.a[0][d] + self.a[1][d] * q.x + self.a[2][d] * q.y;
        }
        Point::new(out[0], out[1])
    }

    pub fn max_bending_weight(&self) -> f64 {
        self.w
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(sum w, sum w x_t, sum w y_t)` per output coordinate.
    pub fn side_conditions(&self) -> [[f64; 2]; 3] {
        let t = TemplateGrid::default();
        let mut s = [[0.0; 2]; 3];
        for d in 0..2 {
            for i in 0..N {
                s[0][d] += self.w[i][d];
                s[1][d] += self.w[i][d] * t.points[i].x;
                s[2][d] += self.w[i][d] * t.points[i].y;
            }
        }
        s
    }
}

/// The factorized template system and its inverse.
struct Solver {
    lu: Lu,
    /// First nine columns of the inverse (12 x 9): coefficients as a linear
    /// function of the targets.
    coef_map: Vec<f64>,
}

fn factor_template() -> Result<Solver> {
    let t = TemplateGrid::default();
    let lu = match Lu::factor(SYS, &t.system_matrix(0.0)) {
        Ok(lu) => lu,
        Err(_) => Lu::factor(SYS, &t.system_matrix(RIDGE))?,
    };
    let inv = lu.inverse();
    let mut coef_map = vec![0.0; SYS * N];
    for r in 0..SYS {
        coef_map[r * N..(r + 1) * N].copy_from_slice(&inv[r * SYS..r * SYS + N]);
    }
    Ok(Solver { lu, coef_map })
}

fn solver() -> &'static Solver {
    static CELL: OnceLock<Solver> = OnceLock::new();
    CELL.get_or_init(|| factor_template().expect("the 3x3 template system is non-singular"))
}

fn check_targets(targets: &LandmarkSet) -> Result<()> {
    if !targets.is_finite() {
        return Err(invalid("TPS targets must be finite"));
    }
    Ok(())
}

/// Solves the warp through the cached inverse.
pub fn solve_tps(targets: &LandmarkSet) -> Result<TpsTransform> {
    check_targets(targets)?;
    let m = &solver().coef_map;
    let mut c = [0.0; 2 * SYS];
    for r in 0..SYS {
        for (i, p) in targets.points.iter().enumerate() {
            c[2 * r] += m[r * N + i] * p.x;
            c[2 * r + 1] += m[r * N + i] * p.y;
        }
    }
    Ok(TpsTransform::from_coeffs(&c))
}

/// Solves the warp with a fresh factorization (reference path).
pub fn solve_tps_direct(targets: &LandmarkSet, ridge: f64) -> Result<TpsTransform> {
    check_targets(targets)?;
    let lu = Lu::factor(SYS, &TemplateGrid::default().system_matrix(ridge))?;
    let mut c = [0.0; 2 * SYS];
    for d in 0..2 {
        let mut rhs = [0.0; SYS];
        for (i, p) in targets.points.iter().enumerate() {
            rhs[i] = if d == 0 { p.x } else { p.y };
        }
        for (r, v) in lu.solve(&rhs).into_iter().enumerate() {
            c[2 * r + d] = v;
        }
    }
    Ok(TpsTransform::from_coeffs(&c))
}

/// Solves with the cached factorization but by substitution rather than
/// the stored inverse.
pub fn solve_tps_cached_lu(targets: &LandmarkSet) -> Result<TpsTransform> {
    check_targets(targets)?;
    let lu = &solver().lu;
    let mut c = [0.0; 2 * SYS];
    for d in 0..2 {
        let mut rhs = [0.0; SYS];
        for (i, p) in targets.points.iter().enumerate() {
            rhs[i] = if d == 0 { p.x } else { p.y };
        }
        for (r, v) in lu.solve(&rhs).into_iter().enumerate() {
            c[2 * r + d] = v;
        }
    }
    Ok(TpsTransform::from_coeffs(&c))
}

/// Regular lattice spanning `[-1, 1]` inclusive.
pub fn lattice(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 2.0 * i as f64 / (n - 1) as f64 - 1.0)
        .collect()
}

/// `h x w x 2` sampling grid in the input's normalized frame.
pub fn generate_grid(t: &TpsTransform, h: usize, w: usize) -> Result<Vec<f64>> {
    if h < 2 || w < 2 {
        return Err(invalid(format!("ROI must be at least 2x2, got {h}x{w}")));
    }
    let (ys, xs) = (lattice(h), lattice(w));
    let mut out = Vec::with_capacity(h * w * 2);
    for &y in &ys {
        for &x in &xs {
            let p = t.eval(Point::new(x, y));
            out.push(p.x);
            out.push(p.y);
        }
    }
    Ok(out)
}

/// Samples `image` on the TPS grid defined by `landmarks`.
pub fn extract_roi(image: &Image, landmarks: &LandmarkSet, h: usize, w: usize) -> Result<Image> {
    let t = solve_tps(landmarks)?;
    let grid = generate_grid(&t, h, w)?;
    let mut out = Image::zeros(w, h, image.channels());
    for y in 0..h {
        for x in 0..w {
            let k = 2 * (y * w + x);
            for c in 0..image.channels() {
                out.set(c, x, y, image.sample_normalized(c, grid[k], grid[k + 1]));
            }
        }
    }
    Ok(out)
}

/// Precomputed linear maps for one ROI size, in the graph's scalar type.
pub struct RoiSampler<T> {
    pub h: usize,
    pub w: usize,
    /// 12 x 9: targets to coefficients.
    coef_map: Arc<Vec<T>>,
    /// hw x 12: coefficients to grid.
    basis: Arc<Vec<T>>,
    /// hw x 9: targets straight to grid.
    fused: Arc<Vec<T>>,
}

impl<T: Real> RoiSampler<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h < 2 || w < 2 {
            return Err(invalid(format!("ROI must be at least 2x2, got {h}x{w}")));
        }
        let tmpl = TemplateGrid::default();
        let cm = &solver().coef_map;
        let (ys, xs) = (lattice(h), lattice(w));
        let mut basis = Vec::with_capacity(h * w * SYS);
        let mut fused = Vec::with_capacity(h * w * N);
        for &y in &ys {
            for &x in &xs {
                let row = tmpl.basis_row(Point::new(x, y));
                basis.extend(row.iter().map(|&v| T::lit(v)));
                for i in 0..N {
                    let v: f64 = (0..SYS).map(|r| row[r] * cm[r * N + i]).sum();
                    fused.push(T::lit(v));
                }
            }
        }
        Ok(Self {
            h,
            w,
            coef_map: Arc::new(cm.iter().map(|&v| T::lit(v)).collect()),
            basis: Arc::new(basis),
            fused: Arc::new(fused),
        })
    }

    /// Shared instance per `(h, w)`.
    pub fn shared(h: usize, w: usize) -> Result<Arc<Self>>
    where
        T: 'static,
    {
        type Cache = Mutex<HashMap<(usize, usize, std::any::TypeId), Arc<dyn std::any::Any + Send + Sync>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let key = (h, w, std::any::TypeId::of::<T>());
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().expect("sampler cache poisoned");
        if let Some(s) = guard.get(&key) {
            return Ok(s.clone().downcast::<Self>().expect("keyed by type"));
        }
        let s = Arc::new(Self::new(h, w)?);
        guard.insert(key, s.clone());
        Ok(s)
    }

    /// Landmarks `B x 18` to TPS coefficients `B x 12 x 2`.
    pub fn coefficients(&self, g: &mut Graph<T>, landmarks: Var) -> Result<Var> {
        let b = g.shape(landmarks)[0];
        let t = g.reshape(landmarks, &[b, N, 2])?;
        Ok(g.fixed_linear(t, self.coef_map.clone(), SYS, N)?)
    }

    /// Coefficients `B x 12 x 2` to a sampling grid `B x h x w x 2`.
    pub fn grid(&self, g: &mut Graph<T>, coeffs: Var) -> Result<Var> {
        let b = g.shape(coeffs)[0];
        let out = g.fixed_linear(coeffs, self.basis.clone(), self.h * self.w, SYS)?;
        Ok(g.reshape(out, &[b, self.h, self.w, 2])?)
    }

    /// Landmarks `B x 18` straight to the grid through the fused map.
    pub fn grid_from_landmarks(&self, g: &mut Graph<T>, landmarks: Var) -> Result<Var> {
        let b = g.shape(landmarks)[0];
        let t = g.reshape(landmarks, &[b, N, 2])?;
        let out = g.fixed_linear(t, self.fused.clone(), self.h * self.w, N)?;
        Ok(g.reshape(out, &[b, self.h, self.w, 2])?)
    }

    /// ROIs `B x C x h x w` from full images (`1 x C x H_i x W_i` each) at
    /// the given landmarks.
    pub fn extract(&self, g: &mut Graph<T>, images: &[Var], landmarks: Var) -> Result<Var> {
        let grid = self.grid_from_landmarks(g, landmarks)?;
        Ok(g.grid_sample(images, grid)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndgrad::Tensor;

    fn affine_targets(m: [[f64; 2]; 2], b: [f64; 2]) -> LandmarkSet {
        LandmarkSet::template().map(|p| {
            Point::new(
                m[0][0] * p.x + m[0][1] * p.y + b[0],
                m[1][0] * p.x + m[1][1] * p.y + b[1],
            )
        })
    }

    #[test]
    fn identity_targets_give_identity_affine() {
        let t = solve_tps(&LandmarkSet::template()).unwrap();
        assert!(t.max_bending_weight() < 1e-9);
        let want = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for k in 0..3 {
            for d in 0..2 {
                assert!((t.a[k][d] - want[k][d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translation_and_scale() {
        let t = solve_tps(&affine_targets([[1.0, 0.0], [0.0, 1.0]], [0.2, 0.0])).unwrap();
        assert!(t.max_bending_weight() < 1e-9);
        assert!((t.a[0][0] - 0.2).abs() < 1e-9 && t.a[0][1].abs() < 1e-9);
        let grid = generate_grid(&t, 4, 5).unwrap();
        let (ys, xs) = (lattice(4), lattice(5));
        for (k, q) in grid.chunks(2).enumerate() {
            assert!((q[0] - xs[k % 5] - 0.2).abs() < 1e-9);
            assert!((q[1] - ys[k / 5]).abs() < 1e-9);
        }

        let s = solve_tps(&affine_targets([[0.5, 0.0], [0.0, 0.5]], [0.0, 0.0])).unwrap();
        assert!(s.max_bending_weight() < 1e-9);
        assert!((s.a[1][0] - 0.5).abs() < 1e-9 && (s.a[2][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn corners_of_identity_grid() {
        let t = solve_tps(&LandmarkSet::template()).unwrap();
        let g = generate_grid(&t, 2, 2).unwrap();
        let want = [-1.0, -1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(generate_grid(&t, 1, 4).is_err());
    }

    #[test]
    fn interpolates_and_satisfies_side_conditions() {
        let targets = LandmarkSet::template().map(|p| {
            Point::new(0.7 * p.x + 0.1 * (3.0 * p.y).sin(), 0.6 * p.y - 0.2 * p.x * p.x)
        });
        let t = solve_tps(&targets).unwrap();
        for (tp, want) in TemplateGrid::default().points.iter().zip(&targets.points) {
            assert!(t.eval(*tp).dist(*want) < 1e-12);
        }
        for row in t.side_conditions() {
            assert!(row[0].abs() < 1e-12 && row[1].abs() < 1e-12);
        }
        let direct = solve_tps_direct(&targets, 0.0).unwrap();
        let lu = solve_tps_cached_lu(&targets).unwrap();
        for i in 0..N {
            for d in 0..2 {
                assert!((direct.w[i][d] - t.w[i][d]).abs() < 1e-12);
                assert!((lu.w[i][d] - t.w[i][d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonfinite_targets_rejected() {
        let mut s = LandmarkSet::template();
        s.points[3].x = f64::NAN;
        assert!(solve_tps(&s).is_err());
    }

    #[test]
    fn graph_grid_matches_plain_path() {
        let targets = affine_targets([[0.8, 0.1], [-0.1, 0.7]], [0.05, -0.1])
            .map(|p| Point::new(p.x + 0.03 * p.y * p.y, p.y));
        let sampler = RoiSampler::<f64>::new(6, 5).unwrap();
        let mut g = Graph::new();
        let lm = g.input(Tensor::new(&[1, 18], targets.to_flat().to_vec()).unwrap());
        let c = sampler.coefficients(&mut g, lm).unwrap();
        let two_step = sampler.grid(&mut g, c).unwrap();
        let fused = sampler.grid_from_landmarks(&mut g, lm).unwrap();
        let plain = generate_grid(&solve_tps(&targets).unwrap(), 6, 5).unwrap();
        for ((a, b), p) in g.value(two_step).data().iter().zip(g.value(fused).data()).zip(&plain) {
            assert!((a - p).abs() < 1e-12 && (b - p).abs() < 1e-12);
        }
    }

    #[test]
    fn template_roi_is_identity_at_matching_size() {
        let img = Image::from_fn(9, 9, 3, |c, x, y| ((x * 5 + y * 3 + c) % 11) as f32 / 10.0);
        let roi = extract_roi(&img, &LandmarkSet::template(), 9, 9).unwrap();
        for (a, b) in roi.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
