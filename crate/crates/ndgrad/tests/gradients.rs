use ndgrad::gradcheck::check;
use ndgrad::rng::derive_seed;
use ndgrad::{DropoutMode, Graph, RngState, Tensor, Var};
use proptest::prelude::*;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn normal(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Random contraction to a scalar. Its stream must differ from the input's:
/// weights parallel to the input would hide the normalization gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> ndgrad::Result<Var> {
    let mut rng = RngState::from_seed(derive_seed(&[seed, 0x9E37]));
    let w: Vec<f64> = (0..g.value(y).len()).map(|_| rng.normal()).collect();
    g.weighted_sum(y, &w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn conv2d_input_weight_bias(seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2) {
        let mut rng = RngState::from_seed(seed);
        let inputs = [normal(&[1, 2, 5, 5], &mut rng), normal(&[3, 2, 3, 3], &mut rng), normal(&[3], &mut rng)];
        let o = check(&inputs, &[true; 3], STEP, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(o.max_error() < TOL, "{:?}", o.per_input);
    }

    #[test]
    fn maxpool2_away_from_ties(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let mut order: Vec<usize> = (0..36).collect();
        rng.shuffle(&mut order);
        let x = Tensor::from_fn(&[1, 1, 6, 6], |i| order[i] as f64 * 0.05);
        let o = check(&[x], &[true], STEP, |g, v| {
            let y = g.maxpool2(v[0])?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(o.max_error() < TOL);
    }

    #[test]
    fn activations_at_nonzero_points(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let x = Tensor::from_fn(&[4, 5], |_| {
            let v = rng.normal();
            v + 0.01 * v.signum()
        });
        for leak in [0.0, 0.1] {
            let o = check(std::slice::from_ref(&x), &[true], STEP, |g, v| {
                let y = if leak == 0.0 { g.relu(v[0]) } else { g.leaky_relu(v[0], leak) };
                project(g, y, seed)
            }).unwrap();
            prop_assert!(o.max_error() < TOL);
        }
    }

    #[test]
    fn normalization_bounds_and_gradient(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        // The op is scale invariant; channel norms in [1, 2] keep the
        // central difference's truncation error small at this step.
        let mut x = normal(&[2, 3, 4, 4], &mut rng);
        for n in 0..2 {
            for p in 0..16 {
                let idx = |c: usize| n * 48 + c * 16 + p;
                let norm = (0..3).map(|c| x.data()[idx(c)].powi(2)).sum::<f64>().sqrt();
                let target = rng.uniform_range(1.0, 2.0);
                for c in 0..3 {
                    x.data_mut()[idx(c)] *= target / norm;
                }
            }
        }
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let y = g.channel_l2_normalize(v, 1e-8).unwrap();
        let y = g.value(y);
        for n in 0..2 {
            for p in 0..16 {
                let norm: f64 = (0..3).map(|c| y.data()[n * 48 + c * 16 + p].powi(2)).sum::<f64>().sqrt();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&norm));
            }
        }
        let o = check(&[x], &[true], STEP, |g, v| {
            let y = g.channel_l2_normalize(v[0], 1e-8)?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(o.max_error() < TOL, "{:?}", o.per_input);
    }

    #[test]
    fn dense_and_losses(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let inputs = [normal(&[3, 4], &mut rng), normal(&[4, 5], &mut rng), normal(&[5], &mut rng)];
        let labels = [rng.below(5), rng.below(5), rng.below(5)];
        let o = check(&inputs, &[true; 3], STEP, |g, v| {
            let y = g.fully_connected(v[0], v[1], v[2])?;
            g.softmax_cross_entropy(y, &labels)
        }).unwrap();
        prop_assert!(o.max_error() < TOL);
        let pair = [normal(&[2, 6], &mut rng), normal(&[2, 6], &mut rng)];
        let o = check(&pair, &[true, true], STEP, |g, v| g.l2_loss(v[0], v[1])).unwrap();
        prop_assert!(o.max_error() < TOL);
    }

    #[test]
    fn l2_gradient_is_scaled_difference(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let (p, t) = (normal(&[3, 4], &mut rng), normal(&[3, 4], &mut rng));
        let mut g = Graph::new();
        let (vp, vt) = (g.leaf(p.clone(), true), g.input(t.clone()));
        let loss = g.l2_loss(vp, vt).unwrap();
        let grads = g.backward(loss).unwrap();
        for ((gr, a), b) in grads.get(vp).data().iter().zip(p.data()).zip(t.data()) {
            prop_assert!((gr - 2.0 * (a - b) / 12.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_sampling_off_pixel_boundaries(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let image = normal(&[1, 1, 5, 5], &mut rng);
        // Pixel coordinate k + u with u in [0.1, 0.9]; normalized = px / 2 - 1.
        let grid = Tensor::from_fn(&[1, 3, 3, 2], |_| (rng.below(4) as f64 + rng.uniform_range(0.1, 0.9)) / 2.0 - 1.0);
        let o = check(&[image, grid], &[true, true], STEP, |g, v| {
            let y = g.grid_sample(&v[..1], v[1])?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(o.max_error() < TOL);
    }

    #[test]
    fn dropout_with_a_fixed_mask(seed in any::<u64>()) {
        let mut rng = RngState::from_seed(seed);
        let o = check(&[normal(&[3, 8], &mut rng)], &[true], STEP, |g, v| {
            let mut r = RngState::from_seed(seed);
            let y = g.dropout(v[0], 0.4, DropoutMode::Train, &mut r)?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(o.max_error() < TOL);
    }
}

/// Jacobian of `x -> W2^T tanh(W1^T x + b1)` (the 3-op chain
/// fully_connected, tanh, fully_connected) through the tape, one backward
/// pass per output, against the hand-multiplied per-op Jacobians and a
/// brute-force central-difference Jacobian.
#[test]
fn chain_jacobian_matches_product_of_op_jacobians() {
    let mut rng = RngState::from_seed(11);
    let (d, h, m) = (4, 3, 2);
    let x = normal(&[1, d], &mut rng);
    let w1 = normal(&[d, h], &mut rng);
    let b1 = normal(&[h], &mut rng);
    let w2 = normal(&[h, m], &mut rng);
    let b2 = Tensor::zeros(&[m]);

    let forward = |g: &mut Graph<f64>, xv: Var| {
        let (w1v, b1v) = (g.input(w1.clone()), g.input(b1.clone()));
        let (w2v, b2v) = (g.input(w2.clone()), g.input(b2.clone()));
        let a = g.fully_connected(xv, w1v, b1v).unwrap();
        let t = g.tanh(a);
        g.fully_connected(t, w2v, b2v).unwrap()
    };

    let mut tape = vec![[0.0; 4]; m];
    for (k, row) in tape.iter_mut().enumerate() {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let y = forward(&mut g, xv);
        let mut onehot = vec![0.0; m];
        onehot[k] = 1.0;
        let s = g.weighted_sum(y, &onehot).unwrap();
        let grads = g.backward(s).unwrap();
        row.copy_from_slice(grads.get(xv).data());
    }

    // d y_k / d x_i = sum_j W2[j,k] (1 - tanh^2(a_j)) W1[i,j]
    let a: Vec<f64> = (0..h)
        .map(|j| b1.data()[j] + (0..d).map(|i| x.data()[i] * w1.data()[i * h + j]).sum::<f64>())
        .collect();
    let product = |k: usize, i: usize| -> f64 {
        (0..h)
            .map(|j| w2.data()[j * m + k] * (1.0 - a[j].tanh().powi(2)) * w1.data()[i * h + j])
            .sum()
    };

    let eval = |xs: &Tensor<f64>| -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.input(xs.clone());
        let y = forward(&mut g, xv);
        g.value(y).data().to_vec()
    };
    let eps = 1e-6;
    for i in 0..d {
        let (mut up, mut down) = (x.clone(), x.clone());
        up.data_mut()[i] += eps;
        down.data_mut()[i] -= eps;
        let (yu, yd) = (eval(&up), eval(&down));
        for k in 0..m {
            let brute = (yu[k] - yd[k]) / (2.0 * eps);
            assert!((tape[k][i] - product(k, i)).abs() < 1e-12, "({k},{i})");
            assert!((tape[k][i] - brute).abs() < 1e-8, "({k},{i})");
        }
    }
}

#[test]
fn unreachable_nodes_get_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0), true);
    let b = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
    let _unused = g.tanh(b);
    let loss = g.weighted_sum(a, &[1.0; 6]).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(b).data().iter().all(|&v| v == 0.0));
    assert!(grads.get(a).data().iter().all(|&v| v == 1.0));
}
