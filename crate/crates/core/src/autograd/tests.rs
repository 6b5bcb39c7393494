use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::ParamStore;
use crate::testing::{check_gradients, randn, GradCheckOptions};

/// Contracts `y` with a fixed random tensor so every output element carries a
/// distinct weight.
fn probe<'g>(y: Var<'g>, seed: u64) -> Var<'g> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = randn(&mut rng, &y.shape(), 1.0);
    y.mul(y.graph().constant(w)).sum_all()
}

fn inputs(shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    shapes.iter().map(|s| randn(&mut rng, s, 1.0)).collect()
}

fn assert_grads<F>(shapes: &[&[usize]], f: F)
where
    F: for<'g> Fn(&[Var<'g>]) -> Var<'g>,
{
    let store = ParamStore::new();
    let report = check_gradients(
        &store,
        &inputs(shapes),
        |_, xs| probe(f(xs), 3),
        &GradCheckOptions { samples_per_tensor: 40, ..Default::default() },
    );
    assert!(report.max_error() < 1e-6, "{report:?}");
}

#[test]
fn unary_maps() {
    assert_grads(&[&[3, 5]], |x| x[0].sigmoid().add(x[0].silu()).add(x[0].tanh()));
    assert_grads(&[&[3, 5]], |x| x[0].softplus().add(x[0].gelu()).add(x[0].exp()).add(x[0].square()));
    assert_grads(&[&[4, 4]], |x| x[0].relu().scale(2.5).add_scalar(1.0).neg());
}

#[test]
fn broadcasting_binary_ops() {
    assert_grads(&[&[2, 3, 4], &[3, 1]], |x| x[0].add(x[1]));
    assert_grads(&[&[2, 3, 4], &[1, 3, 4]], |x| x[0].sub(x[1]));
    assert_grads(&[&[2, 3, 4], &[4]], |x| x[0].mul(x[1]));
}

#[test]
fn prelu_and_reductions() {
    assert_grads(&[&[2, 3, 5], &[3]], |x| x[0].prelu(x[1]));
    assert_grads(&[&[2, 3, 5]], |x| x[0].mean_axes_keep(&[1, 2]).square());
    assert_grads(&[&[2, 3]], |x| x[0].mean_all().square());
}

#[test]
fn shape_ops() {
    assert_grads(&[&[2, 3, 4]], |x| x[0].permute(&[2, 0, 1]).reshape(&[4, 6]));
    assert_grads(&[&[2, 6]], |x| x[0].slice_axis(1, 1, 4).pad_axis(1, 2, 1).flip(1));
    assert_grads(&[&[2, 3], &[2, 2]], |x| concat(&[x[0], x[1].square()], 1));
    let idx: Rc<[usize]> = Rc::from(vec![3, 0, 0, 2]);
    let idx2 = idx.clone();
    assert_grads(&[&[2, 4]], move |x| x[0].index_select(1, idx.clone()));
    assert_grads(&[&[2, 4]], move |x| x[0].index_add(1, idx2.clone(), 5));
}

#[test]
fn matmul_and_linear() {
    assert_grads(&[&[2, 3, 4], &[4, 5]], |x| x[0].matmul(x[1]));
    assert_grads(&[&[2, 3, 4], &[2, 4, 2]], |x| x[0].matmul(x[1]));
    assert_grads(&[&[2, 3, 4], &[5, 4], &[5]], |x| x[0].linear(x[1], Some(x[2])));
}

#[test]
fn convolutions() {
    assert_grads(&[&[2, 3, 11], &[4, 3, 3], &[4]], |x| x[0].conv1d(x[1], Some(x[2]), 2, 1, 2));
    assert_grads(&[&[2, 3, 7], &[4, 3, 1]], |x| x[0].conv1d(x[1], None, 1, 0, 0));
    assert_grads(&[&[2, 3, 6], &[3, 2, 4], &[2]], |x| x[0].conv_transpose1d(x[1], Some(x[2]), 2));
}

#[test]
fn conv1d_matches_direct_sum() {
    let xs = inputs(&[&[1, 2, 9], &[3, 2, 4]]);
    let g = Graph::inference();
    let y = g.constant(xs[0].clone()).conv1d(g.constant(xs[1].clone()), None, 2, 1, 0).value();
    for co in 0..3 {
        for t in 0..y.shape()[2] {
            let mut acc = 0.0;
            for c in 0..2 {
                for k in 0..4 {
                    let pos = (2 * t + k) as isize - 1;
                    if pos >= 0 && (pos as usize) < 9 {
                        acc += xs[1][[co, c, k]] * xs[0][[0, c, pos as usize]];
                    }
                }
            }
            assert!((y[[0, co, t]] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn pooling_and_standardize() {
    assert_grads(&[&[2, 3, 8]], |x| x[0].max_pool2());
    assert_grads(&[&[2, 3, 5]], |x| x[0].standardize(&[2], 1e-8));
    assert_grads(&[&[2, 3, 5, 2]], |x| x[0].standardize(&[0, 2], 1e-5));
}

#[test]
fn standardize_moments() {
    let xs = inputs(&[&[3, 4, 10]]);
    let g = Graph::inference();
    let y = g.constant(xs[0].clone()).standardize(&[2], 1e-12).value();
    for b in 0..3 {
        for c in 0..4 {
            let lane = y.slice(ndarray::s![b, c, ..]);
            let m = lane.mean().unwrap();
            let v = lane.mapv(|x| (x - m) * (x - m)).mean().unwrap();
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn lstm_recurrence_gradients() {
    assert_grads(&[&[3, 5, 8], &[8, 2]], |x| crate::nn::lstm_recurrence(x[0], x[1]));
}

#[test]
fn inference_graph_keeps_no_closures() {
    let g = Graph::inference();
    let store = ParamStore::new();
    let x = g.leaf(ndarray::arr1(&[1.0, 2.0]).into_dyn());
    let y = x.square().sum_all();
    assert_eq!(y.item(), 5.0);
    assert!(g.nodes.borrow().iter().all(|n| n.backward.is_none()));
    drop(store);
}

#[test]
fn shared_input_accumulates() {
    let g = Graph::new();
    let x = g.leaf(ndarray::arr1(&[3.0]).into_dyn());
    let y = x.mul(x).add(x).sum_all();
    let grads = g.backward(y);
    assert_eq!(grads.wrt(x).unwrap()[[0]], 7.0);
}

#[test]
fn attention_gradients() {
    assert_grads(&[&[1, 2, 5, 3], &[1, 2, 4, 3], &[1, 2, 4, 2]], |x| x[0].attention(x[1], x[2]));
    // More queries than one block.
    let store = ParamStore::new();
    let report = check_gradients(
        &store,
        &inputs(&[&[1, 1, 70, 2], &[1, 1, 6, 2], &[1, 1, 6, 2]]),
        |_, xs| probe(xs[0].attention(xs[1], xs[2]), 5),
        &GradCheckOptions { samples_per_tensor: 30, ..Default::default() },
    );
    assert!(report.max_error() < 1e-6, "{report:?}");
}

#[test]
fn attention_matches_naive_softmax() {
    let xs = inputs(&[&[2, 1, 67, 3], &[2, 1, 5, 3], &[2, 1, 5, 2]]);
    let g = Graph::inference();
    let y = g.constant(xs[0].clone()).attention(g.constant(xs[1].clone()), g.constant(xs[2].clone())).value();
    let scale = 1.0 / 3f64.sqrt();
    for b in 0..2 {
        for i in 0..67 {
            let scores: Vec<f64> = (0..5)
                .map(|j| (0..3).map(|c| xs[0][[b, 0, i, c]] * xs[1][[b, 0, j, c]]).sum::<f64>() * scale)
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..2 {
                let want: f64 = (0..5).map(|j| scores[j].exp() / z * xs[2][[b, 0, j, c]]).sum();
                assert!((y[[b, 0, i, c]] - want).abs() < 1e-12);
            }
        }
    }
}
