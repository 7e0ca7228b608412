mod activation;
mod conv;
mod linear;
mod loss;
mod norm;
mod pool;
mod sample;
mod shape;

use std::sync::Arc;

use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

pub use activation::DropoutMode;

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    LeakyRelu {
        input: Var,
        leak: T,
    },
    Tanh {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    ChannelL2Norm {
        input: Var,
        inv_norm: Vec<T>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    L2Loss {
        pred: Var,
        target: Var,
    },
    FixedLinear {
        input: Var,
        matrix: Arc<Vec<T>>,
        rows: usize,
        inner: usize,
    },
    GridSample {
        images: Vec<Var>,
        grid: Var,
    },
    Reshape {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
}

impl<T: Real> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            Op::Linear { x, weight, bias } => vec![*x, *weight, *bias],
            Op::L2Loss { pred, target } => vec![*pred, *target],
            Op::GridSample { images, grid } => {
                let mut v = images.clone();
                v.push(*grid);
                v
            }
            Op::MaxPool2 { input, .. }
            | Op::LeakyRelu { input, .. }
            | Op::Tanh { input }
            | Op::Dropout { input, .. }
            | Op::ChannelL2Norm { input, .. }
            | Op::FixedLinear { input, .. }
            | Op::Reshape { input }
            | Op::WeightedSum { input, .. } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    pub(crate) fn backward(
        &self,
        g: &Graph<T>,
        out: &Tensor<T>,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        match self {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => conv::backward(g, *input, *weight, *bias, *stride, *pad, gout, grads),
            Op::MaxPool2 { input, argmax } => pool::backward(g, *input, argmax, gout, grads),
            Op::LeakyRelu { input, leak } => {
                activation::leaky_relu_backward(g, *input, *leak, gout, grads)
            }
            Op::Tanh { input } => activation::tanh_backward(g, *input, out, gout, grads),
            Op::Dropout { input, mask } => {
                activation::dropout_backward(g, *input, mask, gout, grads)
            }
            Op::ChannelL2Norm { input, inv_norm } => {
                norm::backward(g, *input, inv_norm, out, gout, grads)
            }
            Op::Linear { x, weight, bias } => {
                linear::backward(g, *x, *weight, *bias, gout, grads)
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => loss::softmax_ce_backward(g, *logits, labels, probs, gout, grads),
            Op::L2Loss { pred, target } => loss::l2_backward(g, *pred, *target, gout, grads),
            Op::FixedLinear {
                input,
                matrix,
                rows,
                inner,
            } => shape::fixed_linear_backward(g, *input, matrix, *rows, *inner, gout, grads),
            Op::GridSample { images, grid } => sample::backward(g, images, *grid, gout, grads),
            Op::Reshape { input } => {
                if let Some(gi) = g.grad_slot(grads, *input) {
                    gi.iter_mut().zip(gout).for_each(|(a, &b)| *a = *a + b);
                }
            }
            Op::WeightedSum { input, weights } => {
                if let Some(gi) = g.grad_slot(grads, *input) {
                    let s = gout[0];
                    gi.iter_mut()
                        .zip(weights)
                        .for_each(|(a, &w)| *a = *a + s * w);
                }
            }
        }
    }
}
