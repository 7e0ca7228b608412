use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

impl<T: Real> Graph<T> {
    /// Divides the channel vector at every (n, h, w) by
    /// `sqrt(sum of squares + eps)`.
    pub fn channel_l2_normalize(&mut self, input: Var, eps: T) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(dim_err(
                "channel_l2_normalize",
                format!("input must be NCHW, got {s:?}"),
            ));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_norm = vec![T::zero(); n * hw];
        for ni in 0..n {
            let base = ni * c * hw;
            for p in 0..hw {
                let ss: T = (0..c).map(|ci| x[base + ci * hw + p].powi(2)).sum();
                let denom = (ss + eps).sqrt();
                let inv = if denom > T::zero() {
                    T::one() / denom
                } else {
                    T::zero()
                };
                inv_norm[ni * hw + p] = inv;
                for ci in 0..c {
                    out[base + ci * hw + p] = x[base + ci * hw + p] * inv;
                }
            }
        }
        let value = Tensor::new(&s, out)?;
        Ok(self.push(value, Op::ChannelL2Norm { input, inv_norm }))
    }
}

pub(super) fn backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    inv_norm: &[T],
    out: &Tensor<T>,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = g.shape(input);
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let y = out.data();
    if let Some(gi) = g.grad_slot(grads, input) {
        for ni in 0..n {
            let base = ni * c * hw;
            for p in 0..hw {
                let dot: T = (0..c)
                    .map(|ci| y[base + ci * hw + p] * gout[base + ci * hw + p])
                    .sum();
                let inv = inv_norm[ni * hw + p];
                for ci in 0..c {
                    let i = base + ci * hw + p;
                    gi[i] = gi[i] + (gout[i] - y[i] * dot) * inv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 2, 1, 1], vec![3.0, 4.0]).unwrap());
        let y = g.channel_l2_normalize(x, 0.0).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        let y = g.channel_l2_normalize(x, 1e-10).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
