use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

impl<T: Real> Graph<T> {
    /// `x (N x D) * W (D x M) + b (M)`.
    pub fn fully_connected(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(dim_err(
                "fully_connected",
                format!("x {xs:?}, W {ws:?}, b {bs:?}"),
            ));
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        T::gemm(
            false,
            false,
            n,
            m,
            d,
            T::one(),
            self.value(x).data(),
            self.value(weight).data(),
            T::one(),
            &mut out,
        );
        let value = Tensor::new(&[n, m], out)?;
        Ok(self.push(value, Op::Linear { x, weight, bias }))
    }
}

pub(super) fn backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    weight: Var,
    bias: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (n, d) = (g.shape(x)[0], g.shape(x)[1]);
    let m = g.shape(weight)[1];
    if let Some(gb) = g.grad_slot(grads, bias) {
        for row in gout.chunks(m) {
            gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
        }
    }
    if let Some(gw) = g.grad_slot(grads, weight) {
        T::gemm(true, false, d, m, n, T::one(), g.value(x).data(), gout, T::one(), gw);
    }
    if let Some(gx) = g.grad_slot(grads, x) {
        T::gemm(false, true, n, d, m, T::one(), gout, g.value(weight).data(), T::one(), gx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_and_zero_weight() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn(&[2, 3], |i| i as f64 - 1.5);
        let x = g.input(xt.clone());
        let eye = g.input(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let zb = g.input(Tensor::zeros(&[3]));
        let y = g.fully_connected(x, eye, zb).unwrap();
        assert_eq!(g.value(y), &xt);

        let zw = g.input(Tensor::zeros(&[3, 2]));
        let b = g.input(Tensor::new(&[2], vec![0.5, -2.0]).unwrap());
        let y = g.fully_connected(x, zw, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn mismatch_is_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 3]));
        let w = g.input(Tensor::zeros(&[4, 2]));
        let b = g.input(Tensor::zeros(&[2]));
        assert!(g.fully_connected(x, w, b).is_err());
    }
}
