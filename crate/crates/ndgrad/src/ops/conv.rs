use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Real>(x: &[T], geo: &Geometry, cols: &mut [T]) {
    let Geometry {
        c,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    } = *geo;
    let n_out = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *slot = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], geo: &Geometry, gx: &mut [T]) {
    let Geometry {
        c,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    } = *geo;
    let n_out = oh * ow;
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(
    input: &[usize],
    weight: &[usize],
    bias: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geometry)> {
    if input.len() != 4 {
        return Err(dim_err("conv2d", format!("input must be NCHW, got {input:?}")));
    }
    if weight.len() != 4 || weight[2] != weight[3] {
        return Err(dim_err(
            "conv2d",
            format!("weight must be OxCxKxK, got {weight:?}"),
        ));
    }
    if weight[1] != input[1] {
        return Err(dim_err(
            "conv2d",
            format!(
                "channel axis: input C={} but weight expects C={}",
                input[1], weight[1]
            ),
        ));
    }
    if bias != [weight[0]] {
        return Err(dim_err(
            "conv2d",
            format!("bias axis: {bias:?} for {} output channels", weight[0]),
        ));
    }
    if stride == 0 {
        return Err(dim_err("conv2d", "stride must be positive"));
    }
    let (h, w, k) = (input[2], input[3], weight[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(dim_err(
            "conv2d",
            format!("spatial axes: kernel {k} does not fit padded input {h}x{w} (pad {pad})"),
        ));
    }
    let geo = Geometry {
        c: input[1],
        h,
        w,
        k,
        stride,
        pad,
        oh: (h + 2 * pad - k) / stride + 1,
        ow: (w + 2 * pad - k) / stride + 1,
    };
    Ok((input[0], weight[0], geo))
}

impl<T: Real> Graph<T> {
    /// 2-D cross-correlation over an NCHW batch with an OxCxKxK kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, o, geo) = geometry(
            self.shape(input),
            self.shape(weight),
            self.shape(bias),
            stride,
            pad,
        )?;
        let (rows, ncol) = (geo.col_rows(), geo.col_cols());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let in_per = geo.c * geo.h * geo.w;
        let mut out = vec![T::zero(); n * o * ncol];
        let mut cols = vec![T::zero(); rows * ncol];
        for ni in 0..n {
            im2col(&x[ni * in_per..(ni + 1) * in_per], &geo, &mut cols);
            let dst = &mut out[ni * o * ncol..(ni + 1) * o * ncol];
            for (oi, chunk) in dst.chunks_mut(ncol).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[oi]);
            }
            T::gemm(false, false, o, ncol, rows, T::one(), wt, &cols, T::one(), dst);
        }
        let value = Tensor::new(&[n, o, geo.oh, geo.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (n, o, geo) = geometry(g.shape(input), g.shape(weight), g.shape(bias), stride, pad)
        .expect("validated in forward");
    let (rows, ncol) = (geo.col_rows(), geo.col_cols());
    let in_per = geo.c * geo.h * geo.w;

    if let Some(gb) = g.grad_slot(grads, bias) {
        for ni in 0..n {
            for (oi, slot) in gb.iter_mut().enumerate() {
                let s: T = gout[(ni * o + oi) * ncol..(ni * o + oi + 1) * ncol]
                    .iter()
                    .copied()
                    .sum();
                *slot = *slot + s;
            }
        }
    }

    let need_w = g.requires_grad(weight);
    let need_x = g.requires_grad(input);
    if !need_w && !need_x {
        return;
    }
    let x = g.value(input).data();
    let wt = g.value(weight).data();
    let mut cols = vec![T::zero(); rows * ncol];
    let mut gw_acc = if need_w {
        Some(vec![T::zero(); o * rows])
    } else {
        None
    };
    let mut gx_acc = if need_x {
        Some(vec![T::zero(); n * in_per])
    } else {
        None
    };
    for ni in 0..n {
        let go = &gout[ni * o * ncol..(ni + 1) * o * ncol];
        if let Some(gw) = gw_acc.as_mut() {
            im2col(&x[ni * in_per..(ni + 1) * in_per], &geo, &mut cols);
            T::gemm(false, true, o, rows, ncol, T::one(), go, &cols, T::one(), gw);
        }
        if let Some(gx) = gx_acc.as_mut() {
            T::gemm(true, false, rows, ncol, o, T::one(), wt, go, T::zero(), &mut cols);
            col2im(&cols, &geo, &mut gx[ni * in_per..(ni + 1) * in_per]);
        }
    }
    if let (Some(gw), Some(slot)) = (gw_acc, g.grad_slot(grads, weight)) {
        slot.iter_mut().zip(gw).for_each(|(a, b)| *a = *a + b);
    }
    if let (Some(gx), Some(slot)) = (gx_acc, g.grad_slot(grads, input)) {
        #[cfg(feature = "fault-injection")]
        let sign = if crate::fault::conv_sign_flip() {
            -T::one()
        } else {
            T::one()
        };
        #[cfg(not(feature = "fault-injection"))]
        let sign = T::one();
        slot.iter_mut().zip(gx).for_each(|(a, b)| *a = *a + sign * b);
    }
}
