use std::sync::Arc;

use super::Op;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input: x }))
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    /// `sum_i weights[i] * x[i]`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(dim_err(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), v.len()),
            ));
        }
        let s = v.data().iter().zip(weights).map(|(&a, &w)| a * w).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input: x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Applies a constant matrix `M (rows x inner)` to every batch item of
    /// `x (batch x inner x cols)`: `out[b] = M * x[b]`.
    pub fn fixed_linear(
        &mut self,
        x: Var,
        matrix: Arc<Vec<T>>,
        rows: usize,
        inner: usize,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != inner || matrix.len() != rows * inner {
            return Err(dim_err(
                "fixed_linear",
                format!("input {s:?} against matrix {rows}x{inner}"),
            ));
        }
        let (batch, cols) = (s[0], s[2]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); batch * rows * cols];
        for b in 0..batch {
            T::gemm(
                false,
                false,
                rows,
                cols,
                inner,
                T::one(),
                &matrix,
                &xv[b * inner * cols..(b + 1) * inner * cols],
                T::zero(),
                &mut out[b * rows * cols..(b + 1) * rows * cols],
            );
        }
        let value = Tensor::new(&[batch, rows, cols], out)?;
        Ok(self.push(
            value,
            Op::FixedLinear {
                input: x,
                matrix,
                rows,
                inner,
            },
        ))
    }
}

pub(super) fn fixed_linear_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    matrix: &[T],
    rows: usize,
    inner: usize,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = g.shape(input);
    let (batch, cols) = (s[0], s[2]);
    if let Some(gi) = g.grad_slot(grads, input) {
        for b in 0..batch {
            T::gemm(
                true,
                false,
                inner,
                cols,
                rows,
                T::one(),
                matrix,
                &gout[b * rows * cols..(b + 1) * rows * cols],
                T::one(),
                &mut gi[b * inner * cols..(b + 1) * inner * cols],
            );
        }
    }
}
