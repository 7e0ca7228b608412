//! Finite-difference checks of every differentiable operation, in `f64`,
//! over random instances.

use ndgrad::gradcheck::check;
use ndgrad::rng::derive_seed;
use ndgrad::{DropoutMode, Graph, RngState, Tensor, Var};

use crate::error::Result;
use crate::landmarks::LandmarkSet;
use crate::tps::{self, solve_tps, RoiSampler};

pub const TOLERANCE: f64 = 1e-4;
/// The landmark path runs through a TPS solve and bilinear sampling of a
/// discrete image, so it gets a looser bound.
pub const LANDMARK_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-3;
/// Inputs stay at least this far from kinks, well beyond the step.
const KINK_GAP: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

fn normal(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Normal values pushed at least `gap` away from zero, for kinked ops.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        v + gap * v.signum()
    })
}

/// Distinct values at least `KINK_GAP` apart, so no 2x2 window has a tie
/// within reach of the step.
fn tie_free(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rank: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut rank);
    let spacing = 4.0 * KINK_GAP;
    Tensor::from_fn(shape, |i| {
        (rank[i] as f64 - n as f64 / 2.0) * spacing + rng.uniform_range(0.0, KINK_GAP)
    })
}

/// Normalized sampling coordinates whose pixel positions keep away from
/// pixel boundaries, where bilinear sampling has kinks.
fn interior_grid(shape: &[usize], width: usize, height: usize, rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| {
        let side = if i % 2 == 0 { width } else { height };
        let px = rng.below(side - 1) as f64 + rng.uniform_range(0.1, 0.9);
        px / ((side - 1) as f64 / 2.0) - 1.0
    })
}

/// Contracts an output with fixed random weights so every element matters.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> ndgrad::Result<Var> {
    let n = g.value(out).len();
    let mut rng = RngState::from_seed(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    g.weighted_sum(out, &w)
}

fn smooth_image(side: usize, channels: usize, rng: &mut RngState) -> Tensor<f64> {
    let (a, b, c) = (rng.uniform_range(0.2, 0.6), rng.uniform_range(0.2, 0.6), rng.uniform());
    Tensor::from_fn(&[1, channels, side, side], |i| {
        let x = (i % side) as f64;
        let y = ((i / side) % side) as f64;
        let ch = (i / (side * side)) as f64;
        0.5 + 0.3 * (a * x + c + ch).sin() * (b * y - ch).cos()
    })
}

fn jittered_template(scale: f64, jitter: f64, rng: &mut RngState) -> Tensor<f64> {
    let t = LandmarkSet::template().to_flat();
    Tensor::from_fn(&[1, 18], |i| scale * t[i] + jitter * rng.uniform_range(-1.0, 1.0))
}

fn roi_grid(flat: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    tps::generate_grid(&solve_tps(&LandmarkSet::from_flat(flat)?)?, h, w)
}

/// Jittered template landmarks whose `h x w` sampling grid on a square
/// image of `side` pixels stays clear of pixel boundaries while any single
/// landmark coordinate moves by up to `reach`. The grid is linear in the
/// landmarks, so the clearance needed per sample point is exact.
fn kink_free_landmarks(
    h: usize,
    w: usize,
    side: usize,
    reach: f64,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    let px = |g: f64| (g + 1.0) * (side - 1) as f64 / 2.0;
    for _ in 0..10_000 {
        let scale = rng.uniform_range(0.4, 0.7);
        let lm = jittered_template(scale, 0.08, rng).data().to_vec();
        let base = roi_grid(&lm, h, w)?;
        let mut motion = vec![0.0f64; base.len()];
        for j in 0..lm.len() {
            let mut moved = lm.clone();
            moved[j] += 1.0;
            for (m, (a, b)) in motion.iter_mut().zip(roi_grid(&moved, h, w)?.iter().zip(&base)) {
                *m = m.max((px(*a) - px(*b)).abs());
            }
        }
        let clear = base.iter().zip(&motion).all(|(&g, &m)| {
            let p = px(g);
            p > 0.0 && p < (side - 1) as f64 && (p - p.round()).abs() > 2.0 * reach * m
        });
        if clear {
            return Ok(lm);
        }
    }
    Err(crate::error::invalid("no kink-free landmark draw found"))
}

type Case = fn(&mut RngState, u64) -> Result<f64>;

fn conv2d(rng: &mut RngState, s: u64) -> Result<f64> {
    let stride = 1 + rng.below(2);
    let pad = rng.below(2);
    let inputs = [
        normal(&[2, 2, 6, 6], rng),
        normal(&[3, 2, 3, 3], rng),
        normal(&[3], rng),
    ];
    let o = check(&inputs, &[true; 3], STEP, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn maxpool2(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[tie_free(&[2, 2, 6, 6], rng)], &[true], STEP, |g, v| {
        let y = g.maxpool2(v[0])?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn relu(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[away_from_zero(&[3, 7], KINK_GAP, rng)], &[true], STEP, |g, v| {
        let y = g.relu(v[0]);
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn leaky_relu(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[away_from_zero(&[3, 7], KINK_GAP, rng)], &[true], STEP, |g, v| {
        let y = g.leaky_relu(v[0], 0.1);
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn tanh(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[normal(&[3, 7], rng)], &[true], STEP, |g, v| {
        let y = g.tanh(v[0]);
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn dropout(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[normal(&[4, 9], rng)], &[true], STEP, |g, v| {
        let mut r = RngState::from_seed(s);
        let y = g.dropout(v[0], 0.3, DropoutMode::Train, &mut r)?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn channel_l2_normalize(rng: &mut RngState, s: u64) -> Result<f64> {
    let o = check(&[normal(&[2, 4, 3, 3], rng)], &[true], STEP, |g, v| {
        let y = g.channel_l2_normalize(v[0], 1e-8)?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn fully_connected(rng: &mut RngState, s: u64) -> Result<f64> {
    let inputs = [normal(&[3, 5], rng), normal(&[5, 4], rng), normal(&[4], rng)];
    let o = check(&inputs, &[true; 3], STEP, |g, v| {
        let y = g.fully_connected(v[0], v[1], v[2])?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn softmax_cross_entropy(rng: &mut RngState, _: u64) -> Result<f64> {
    let labels: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
    let o = check(&[normal(&[4, 6], rng)], &[true], STEP, |g, v| {
        g.softmax_cross_entropy(v[0], &labels)
    })?;
    Ok(o.max_error())
}

fn l2_loss(rng: &mut RngState, _: u64) -> Result<f64> {
    let inputs = [normal(&[3, 6], rng), normal(&[3, 6], rng)];
    let o = check(&inputs, &[true, true], STEP, |g, v| g.l2_loss(v[0], v[1]))?;
    Ok(o.max_error())
}

fn generate_grid(rng: &mut RngState, s: u64) -> Result<f64> {
    let sampler = RoiSampler::<f64>::new(5, 6)?;
    let lm = jittered_template(rng.uniform_range(0.3, 0.8), 0.1, rng);
    let o = check(&[lm], &[true], STEP, |g, v| {
        let grid = sampler
            .grid_from_landmarks(g, v[0])
            .map_err(|e| ndgrad::Error::Parameter { op: "grid", detail: e.to_string() })?;
        project(g, grid, s)
    })?;
    Ok(o.max_error())
}

fn bilinear_sample(rng: &mut RngState, s: u64) -> Result<f64> {
    let image = normal(&[1, 2, 7, 7], rng);
    let grid = interior_grid(&[1, 4, 4, 2], 7, 7, rng);
    let o = check(&[image, grid], &[true, true], STEP, |g, v| {
        let y = g.grid_sample(&v[..1], v[1])?;
        project(g, y, s)
    })?;
    Ok(o.max_error())
}

fn extract_roi_landmarks(rng: &mut RngState, s: u64) -> Result<f64> {
    let sampler = RoiSampler::<f64>::new(5, 5)?;
    let image = smooth_image(16, 2, rng);
    let lm = Tensor::new(&[1, 18], kink_free_landmarks(5, 5, 16, STEP, rng)?)?;
    let o = check(&[image, lm], &[false, true], STEP, |g, v| {
        let roi = sampler
            .extract(g, &v[..1], v[1])
            .map_err(|e| ndgrad::Error::Parameter { op: "extract_roi", detail: e.to_string() })?;
        project(g, roi, s)
    })?;
    Ok(o.max_error())
}

pub const CASES: [(&str, f64); 14] = [
    ("conv2d", TOLERANCE),
    ("maxpool2", TOLERANCE),
    ("relu", TOLERANCE),
    ("leaky_relu", TOLERANCE),
    ("tanh", TOLERANCE),
    ("dropout", TOLERANCE),
    ("channel_l2_normalize", TOLERANCE),
    ("fully_connected", TOLERANCE),
    ("softmax_cross_entropy", TOLERANCE),
    ("l2_loss", TOLERANCE),
    ("generate_grid", TOLERANCE),
    ("bilinear_sample", TOLERANCE),
    ("extract_roi_landmarks", LANDMARK_TOLERANCE),
    ("landmark_chain", LANDMARK_TOLERANCE),
];

/// Landmarks from a small dense layer, then ROI extraction: the gradient
/// path of the end-to-end network in miniature.
fn landmark_chain(rng: &mut RngState, s: u64) -> Result<f64> {
    let sampler = RoiSampler::<f64>::new(4, 4)?;
    let image = smooth_image(12, 1, rng);
    let x = normal(&[1, 4], rng);
    let w = Tensor::from_fn(&[4, 18], |_| 0.05 * rng.normal());
    // A weight step moves its landmark by step * x_j; a bias step by step.
    let reach = STEP * x.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let lm = kink_free_landmarks(4, 4, 12, reach, rng)?;
    let xw: Vec<f64> = (0..18)
        .map(|k| (0..4).map(|j| x.data()[j] * w.data()[j * 18 + k]).sum())
        .collect();
    let base = Tensor::new(&[18], lm.iter().zip(&xw).map(|(l, p)| l - p).collect())?;
    let o = check(&[image, x, w, base], &[false, false, true, true], STEP, |g, v| {
        let lm = g.fully_connected(v[1], v[2], v[3])?;
        let roi = sampler
            .extract(g, &v[..1], lm)
            .map_err(|e| ndgrad::Error::Parameter { op: "extract_roi", detail: e.to_string() })?;
        project(g, roi, s)
    })?;
    Ok(o.max_error())
}

fn case_fn(name: &str) -> Case {
    match name {
        "conv2d" => conv2d,
        "maxpool2" => maxpool2,
        "relu" => relu,
        "leaky_relu" => leaky_relu,
        "tanh" => tanh,
        "dropout" => dropout,
        "channel_l2_normalize" => channel_l2_normalize,
        "fully_connected" => fully_connected,
        "softmax_cross_entropy" => softmax_cross_entropy,
        "l2_loss" => l2_loss,
        "generate_grid" => generate_grid,
        "bilinear_sample" => bilinear_sample,
        "extract_roi_landmarks" => extract_roi_landmarks,
        _ => landmark_chain,
    }
}

/// Runs every case on `instances` random instances.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    CASES
        .iter()
        .enumerate()
        .map(|(k, &(name, tolerance))| {
            let f = case_fn(name);
            let mut worst: f64 = 0.0;
            for i in 0..instances {
                let s = derive_seed(&[seed, k as u64, i as u64]);
                let mut rng = RngState::from_seed(s);
                let e = f(&mut rng, s ^ 0x9E37)?;
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            }
            Ok(CheckReport {
                name,
                instances,
                max_error: worst,
                tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_a_few_instances() {
        for r in run_suite(3, 17).unwrap() {
            assert!(r.passed(), "{} error {:e}", r.name, r.max_error);
        }
    }
}
