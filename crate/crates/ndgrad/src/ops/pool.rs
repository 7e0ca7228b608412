use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

impl<T: Real> Graph<T> {
    /// 2x2 max pooling with stride 2. Ties go to the first maximal element
    /// in row-major order within the window.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(dim_err("maxpool2", format!("input must be NCHW, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err("maxpool2", format!("spatial dims must be even, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }))
    }
}

pub(super) fn backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    argmax: &[usize],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gi) = g.grad_slot(grads, input) {
        for (&idx, &go) in argmax.iter().zip(gout) {
            gi[idx] = gi[idx] + go;
        }
    }
}
