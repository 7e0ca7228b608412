use super::Op;
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

impl<T: Real> Graph<T> {
    /// Mean negative log-softmax of the labelled class over the rows of an
    /// `N x C` logit matrix.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Parameter {
                op: "softmax_cross_entropy",
                detail: format!("label {bad} out of range for {c} classes"),
            });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let se: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + se.ln();
            for (j, p) in probs[i * c..(i + 1) * c].iter_mut().enumerate() {
                *p = (row[j] - lse).exp();
            }
            total = total + (lse - row[label]);
        }
        let loss = total / T::lit(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared difference over all elements.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(dim_err(
                "l2_loss",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let s: T = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = s / T::lit(p.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::L2Loss { pred, target }))
    }
}

pub(super) fn softmax_ce_backward<T: Real>(
    g: &Graph<T>,
    logits: Var,
    labels: &[usize],
    probs: &[T],
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let c = g.shape(logits)[1];
    let scale = gout[0] / T::lit(labels.len() as f64);
    if let Some(gl) = g.grad_slot(grads, logits) {
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..c {
                let onehot = if j == label { T::one() } else { T::zero() };
                let idx = i * c + j;
                gl[idx] = gl[idx] + scale * (probs[idx] - onehot);
            }
        }
    }
}

pub(super) fn l2_backward<T: Real>(
    g: &Graph<T>,
    pred: Var,
    target: Var,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let p = g.value(pred).data();
    let t = g.value(target).data();
    let k = T::lit(2.0) * gout[0] / T::lit(p.len() as f64);
    if let Some(gp) = g.grad_slot(grads, pred) {
        for (i, a) in gp.iter_mut().enumerate() {
            *a = *a + k * (p[i] - t[i]);
        }
    }
    if let Some(gt) = g.grad_slot(grads, target) {
        for (i, a) in gt.iter_mut().enumerate() {
            *a = *a - k * (p[i] - t[i]);
        }
    }
}
