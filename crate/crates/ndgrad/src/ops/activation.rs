use super::Op;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::{Real, RngState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    /// `x` for positive inputs, `leak * x` otherwise (including at zero).
    pub fn leaky_relu(&mut self, x: Var, leak: T) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { leak * v });
        self.push(value, Op::LeakyRelu { input: x, leak })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh { input: x })
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `x` unchanged.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        mode: DropoutMode,
        rng: &mut RngState,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter {
                op: "dropout",
                detail: format!("rate must be in [0, 1), got {rate}"),
            });
        }
        if mode == DropoutMode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.push(value, Op::Dropout { input: x, mask }))
    }
}

pub(super) fn leaky_relu_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    leak: T,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let x = g.value(input).data();
    if let Some(gi) = g.grad_slot(grads, input) {
        for ((a, &go), &xv) in gi.iter_mut().zip(gout).zip(x) {
            *a = *a + if xv > T::zero() { go } else { leak * go };
        }
    }
}

pub(super) fn tanh_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    out: &Tensor<T>,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gi) = g.grad_slot(grads, input) {
        for ((a, &go), &y) in gi.iter_mut().zip(gout).zip(out.data()) {
            *a = *a + go * (T::one() - y * y);
        }
    }
}

pub(super) fn dropout_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    mask: &[T],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    if let Some(gi) = g.grad_slot(grads, input) {
        for ((a, &go), &m) in gi.iter_mut().zip(gout).zip(mask) {
            *a = *a + go * m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(-10.0));
        let y = g.leaky_relu(x, 0.1);
        assert!((g.value(y).item() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn relu_identity_on_positive() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[2, 3], |i| 0.5 + i as f64);
        let x = g.input(t.clone());
        let y = g.relu(x);
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn subgradient_at_zero_is_leak() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(0.0), true);
        let y = g.leaky_relu(x, 0.25);
        let gr = g.backward(y).unwrap().get(x);
        assert_eq!(gr.item(), 0.25);
    }

    #[test]
    fn dropout_identities_and_rate_guard() {
        let mut rng = RngState::from_seed(1);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[10], |i| i as f64));
        assert_eq!(g.dropout(x, 0.0, DropoutMode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.5, DropoutMode::Eval, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, DropoutMode::Train, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, DropoutMode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo_keep_fraction() {
        let n = 100_000;
        let mut rng = RngState::from_seed(99);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[n], 2.0));
        let y = g.dropout(x, 0.5, DropoutMode::Train, &mut rng).unwrap();
        let v = g.value(y).data();
        let kept = v.iter().filter(|&&e| e != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "kept fraction {kept}");
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
        assert!(v.iter().all(|&e| e == 0.0 || e == 4.0));
    }
}
