//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it is
//! independent of every backward kernel it checks.

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::Tensor;

/// Relative error of an analytic gradient against a numeric one:
/// `||a - n|| / max(||a||, ||n||)`, or the absolute difference when both
/// norms are below `1e-10`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    /// Relative error per checked input.
    pub per_input: Vec<f64>,
}

impl CheckOutcome {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds `f` on fresh graphs, compares backward against central
/// differences with the given `step` for every input whose flag in
/// `check` is set.
pub fn check<F>(inputs: &[Tensor<f64>], check: &[bool], step: f64, f: F) -> Result<CheckOutcome>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    assert_eq!(inputs.len(), check.len());
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(dim_err("gradcheck", "function must return a scalar"));
        }
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(check)
        .map(|(t, &c)| g.leaf(t.clone(), c))
        .collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut per_input = Vec::new();
    let mut work = inputs.to_vec();
    for (k, &c) in check.iter().enumerate() {
        if !c {
            continue;
        }
        let analytic = grads.get(vars[k]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        per_input.push(relative_error(analytic.data(), &numeric));
    }
    Ok(CheckOutcome { per_input })
}
