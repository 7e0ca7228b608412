use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

/// The four bilinear taps around a normalized coordinate, align-corners
/// convention: -1 is the center of pixel 0, +1 the center of the last pixel.
struct Taps<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
    sx: T,
    sy: T,
}

impl<T: Real> Taps<T> {
    fn new(gx: T, gy: T, w: usize, h: usize) -> Option<Self> {
        if !gx.is_finite() || !gy.is_finite() {
            return None;
        }
        let half = T::lit(0.5);
        let sx = T::lit((w - 1) as f64) * half;
        let sy = T::lit((h - 1) as f64) * half;
        let px = (gx + T::one()) * sx;
        let py = (gy + T::one()) * sy;
        let fl_x = px.floor();
        let fl_y = py.floor();
        // Far outside the frame every tap is zero.
        if fl_x < T::lit(-2.0)
            || fl_y < T::lit(-2.0)
            || fl_x > T::lit(w as f64 + 1.0)
            || fl_y > T::lit(h as f64 + 1.0)
        {
            return None;
        }
        Some(Self {
            x0: fl_x.as_f64() as isize,
            y0: fl_y.as_f64() as isize,
            fx: px - fl_x,
            fy: py - fl_y,
            sx,
            sy,
        })
    }
}

#[inline]
fn pixel<T: Real>(plane: &[T], w: usize, h: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

impl<T: Real> Graph<T> {
    /// Bilinearly samples image `n` (shape `1 x C x H_n x W_n`) at grid item
    /// `n` (grid shape `N x h x w x 2`, last axis `(x, y)`). Taps outside
    /// the image read as zero. Images may differ in size but not channels.
    pub fn grid_sample(&mut self, images: &[Var], grid: Var) -> Result<Var> {
        let gs = self.shape(grid).to_vec();
        if gs.len() != 4 || gs[3] != 2 || gs[0] != images.len() {
            return Err(dim_err(
                "grid_sample",
                format!("grid {gs:?} for {} images", images.len()),
            ));
        }
        let (n, oh, ow) = (gs[0], gs[1], gs[2]);
        let c = self.shape(images[0]).get(1).copied().unwrap_or(0);
        for &im in images {
            let s = self.shape(im);
            if s.len() != 4 || s[0] != 1 || s[1] != c {
                return Err(dim_err(
                    "grid_sample",
                    format!("image must be 1x{c}xHxW, got {s:?}"),
                ));
            }
            if s[2] < 2 || s[3] < 2 {
                return Err(dim_err(
                    "grid_sample",
                    format!("image must be at least 2x2, got {}x{}", s[2], s[3]),
                ));
            }
        }
        let gv = self.value(grid).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for (ni, &im) in images.iter().enumerate() {
            let s = self.shape(im);
            let (h, w) = (s[2], s[3]);
            let img = self.value(im).data();
            for p in 0..oh * ow {
                let gi = (ni * oh * ow + p) * 2;
                let Some(t) = Taps::new(gv[gi], gv[gi + 1], w, h) else {
                    continue;
                };
                let (x0, y0, fx, fy) = (t.x0, t.y0, t.fx, t.fy);
                let one = T::one();
                for ci in 0..c {
                    let plane = &img[ci * h * w..(ci + 1) * h * w];
                    let v = (one - fx) * (one - fy) * pixel(plane, w, h, x0, y0)
                        + fx * (one - fy) * pixel(plane, w, h, x0 + 1, y0)
                        + (one - fx) * fy * pixel(plane, w, h, x0, y0 + 1)
                        + fx * fy * pixel(plane, w, h, x0 + 1, y0 + 1);
                    out[(ni * c + ci) * oh * ow + p] = v;
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::GridSample {
                images: images.to_vec(),
                grid,
            },
        ))
    }
}

pub(super) fn backward<T: Real>(
    g: &Graph<T>,
    images: &[Var],
    grid: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let gs = g.shape(grid);
    let (oh, ow) = (gs[1], gs[2]);
    let c = g.shape(images[0])[1];
    let gv = g.value(grid).data();
    let one = T::one();

    if g.requires_grad(grid) {
        let mut gg = vec![T::zero(); gv.len()];
        for (ni, &im) in images.iter().enumerate() {
            let s = g.shape(im);
            let (h, w) = (s[2], s[3]);
            let img = g.value(im).data();
            for p in 0..oh * ow {
                let gi = (ni * oh * ow + p) * 2;
                let Some(t) = Taps::new(gv[gi], gv[gi + 1], w, h) else {
                    continue;
                };
                let (x0, y0, fx, fy) = (t.x0, t.y0, t.fx, t.fy);
                let (mut dx, mut dy) = (T::zero(), T::zero());
                for ci in 0..c {
                    let plane = &img[ci * h * w..(ci + 1) * h * w];
                    let go = gout[(ni * c + ci) * oh * ow + p];
                    let v00 = pixel(plane, w, h, x0, y0);
                    let v10 = pixel(plane, w, h, x0 + 1, y0);
                    let v01 = pixel(plane, w, h, x0, y0 + 1);
                    let v11 = pixel(plane, w, h, x0 + 1, y0 + 1);
                    dx = dx + go * ((one - fy) * (v10 - v00) + fy * (v11 - v01));
                    dy = dy + go * ((one - fx) * (v01 - v00) + fx * (v11 - v10));
                }
                gg[gi] = dx * t.sx;
                gg[gi + 1] = dy * t.sy;
            }
        }
        if let Some(slot) = g.grad_slot(grads, grid) {
            slot.iter_mut().zip(gg).for_each(|(a, b)| *a = *a + b);
        }
    }

    for (ni, &im) in images.iter().enumerate() {
        let s = g.shape(im).to_vec();
        let (h, w) = (s[2], s[3]);
        let Some(gi_img) = g.grad_slot(grads, im) else {
            continue;
        };
        for p in 0..oh * ow {
            let gi = (ni * oh * ow + p) * 2;
            let Some(t) = Taps::new(gv[gi], gv[gi + 1], w, h) else {
                continue;
            };
            let (x0, y0, fx, fy) = (t.x0, t.y0, t.fx, t.fy);
            let taps = [
                (x0, y0, (one - fx) * (one - fy)),
                (x0 + 1, y0, fx * (one - fy)),
                (x0, y0 + 1, (one - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for ci in 0..c {
                let go = gout[(ni * c + ci) * oh * ow + p];
                for &(x, y, wt) in &taps {
                    if x >= 0 && y >= 0 && x < w as isize && y < h as isize {
                        let idx = ci * h * w + y as usize * w + x as usize;
                        gi_img[idx] = gi_img[idx] + go * wt;
                    }
                }
            }
        }
    }
}
