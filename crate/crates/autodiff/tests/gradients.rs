//! Finite-difference checks of every differentiable op.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regada_autodiff::{
    check_case, grad_check, op_cases, BatchNormStats, GradCheckOptions, Graph, Mode, Result, Tensor, Var,
};

const POINTS: u64 = 20;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

/// Contract to a scalar through a fixed random readout so every output
/// coordinate gets a distinct upstream gradient.
fn readout(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, shape[0], shape[1]);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn every_op_case_within_tolerance() {
    let cases = op_cases();
    assert!(cases.len() >= 12);
    for case in &cases {
        let r = check_case(case, POINTS, 1000, GradCheckOptions::default()).unwrap();
        println!("{}: worst relative error {:.2e}", r.name, r.max_rel_error);
        assert!(r.max_rel_error <= TOL, "{r:?}");
    }
}

#[test]
fn matmul_tolerance_one_in_a_million() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let point = vec![rand_tensor(&mut rng, 3, 4), rand_tensor(&mut rng, 4, 2)];
    let r = grad_check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            readout(g, y, 2)
        },
        &point,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn mul_on_a_vector_within_one_in_a_million() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let point = vec![rand_tensor(&mut rng, 1, 5), rand_tensor(&mut rng, 1, 5)];
    let r = grad_check(
        |g, v| {
            let m = g.mul(v[0], v[1])?;
            readout(g, m, 4)
        },
        &point,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn tape_replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let x = g.leaf(rand_tensor(&mut rng, 6, 5));
        let gm = g.leaf(Tensor::full(&[1, 5], 1.0));
        let bt = g.leaf(Tensor::zeros(&[1, 5]));
        let mut stats = BatchNormStats::new(5);
        let y = g.batch_norm(x, gm, bt, &mut stats, Mode::Train).unwrap();
        let y = g.dropout(y, 0.5, Mode::Train, &mut rng).unwrap();
        let y = g.sigmoid(y);
        let l = g.sum(y);
        g.backward(l).unwrap();
        (g.value(l).item(), g.grad(x).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        row in proptest::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let n = row.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(row.clone()));
        let xs = g.constant(Tensor::row(row.iter().map(|v| v + shift).collect()));
        let a = g.softmax(x, 1).unwrap();
        let b = g.softmax(xs, 1).unwrap();
        let sum: f64 = g.value(a).data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(g.value(a).data().iter().all(|&p| p >= 0.0));
        for i in 0..n {
            prop_assert!((g.value(a).data()[i] - g.value(b).data()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn sigmoid_stays_finite_and_bounded(x in -1e6f64..1e6) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::scalar(x));
        let s = g.sigmoid(v);
        let y = g.value(s).item();
        prop_assert!(y.is_finite() && (0.0..=1.0).contains(&y));
    }
}
