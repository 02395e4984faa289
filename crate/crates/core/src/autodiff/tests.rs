use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::error::ForgeError;
use crate::tensor::{sample_normal, Rng, Tensor};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    sample_normal(&mut Rng::new(seed), 1.0, shape)
}

/// erf by its Maclaurin series; independent of libm.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn matmul_identity_and_hand_values() {
    let tape = Tape::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    assert_eq!(i.matmul(b).unwrap().data(), vec![3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    assert_eq!(a.matmul(b).unwrap().data(), vec![11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match a.matmul(b) {
        Err(ForgeError::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {:?}", other.map(|v| v.shape())),
    }
}

#[test]
fn grad_of_sum_matmul_is_ones_times_b_transposed() {
    let tape = Tape::new();
    let a = tape.leaf(&random(&[3, 4], 1).with_requires_grad(true));
    let bt = random(&[4, 2], 2);
    let b = tape.constant(bt.clone());
    let loss = a.matmul(b).unwrap().sum();
    tape.backward(loss).unwrap();
    let g = tape.grad(a).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expect: f64 = (0..2).map(|j| bt.data()[k * 2 + j]).sum();
            assert_abs_diff_eq!(g.data()[i * 4 + k], expect, epsilon = 1e-12);
        }
    }
    let fd = finite_diff_grad_check(
        |_, x| Ok(x.matmul(x.tape().constant(bt.clone()))?.sum()),
        &random(&[3, 4], 1),
        1e-5,
    )
    .unwrap();
    assert!(fd < 1e-7, "{fd}");
}

#[test]
fn gelu_values() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, 1.0, -10.0]));
    let y = x.gelu().data();
    assert_eq!(y[0], 0.0);
    let oracle = 0.5 * (1.0 + erf_series(std::f64::consts::FRAC_1_SQRT_2));
    assert_abs_diff_eq!(oracle, 0.8413447, epsilon = 5e-8);
    assert_abs_diff_eq!(y[1], oracle, epsilon = 1e-12);
    assert!(y[2].abs() < 1e-8);
}

#[test]
fn gelu_matches_tanh_form_loosely() {
    // interop note: the tanh approximation differs by well under 1e-3
    let tape = Tape::new();
    let xs: Vec<f64> = (-40..=40).map(|i| i as f64 / 10.0).collect();
    let y = tape.constant(t(&[xs.len()], &xs)).gelu().data();
    for (x, y) in xs.iter().zip(y) {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let approx = 0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh());
        assert!((approx - y).abs() < 1e-3);
    }
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3, 2], &[0.0, 0.0, 1000.0, 1000.0, 1.0f64.ln(), 3.0f64.ln()]));
    let y = x.softmax().data();
    assert_eq!(&y[..4], &[0.5, 0.5, 0.5, 0.5]);
    assert_abs_diff_eq!(y[4], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(y[5], 0.75, epsilon = 1e-12);
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[3]));
    let zeros = tape.constant(Tensor::zeros(&[3]));
    let c = tape.constant(t(&[1, 3], &[2.0, 2.0, 2.0]));
    assert_eq!(c.layer_norm(ones, zeros, 1e-6).unwrap().data(), vec![0.0; 3]);

    let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let y = x.layer_norm(ones, zeros, 1e-6).unwrap().data();
    for (a, b) in y.iter().zip([-1.22474, 0.0, 1.22474]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
    }

    let five = tape.constant(Tensor::full(&[3], 5.0));
    let y = x.layer_norm(zeros, five, 1e-6).unwrap().data();
    assert_eq!(y, vec![5.0; 3]);
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let z = tape.constant(t(&[1, 2], &[0.0, 0.0]));
    assert_abs_diff_eq!(z.cross_entropy(&[0]).unwrap().item(), 2f64.ln(), epsilon = 1e-12);

    let z = tape.constant(t(&[1, 3], &[1e6, 0.0, 0.0]));
    assert!(z.cross_entropy(&[0]).unwrap().item().abs() < 1e-12);

    let logits = [0.3, -1.2, 2.0, 0.5, 0.1, -0.4];
    let z = tape.constant(t(&[2, 3], &logits));
    let per = |row: &[f64], y: usize| {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        -(row[y].exp() / s).ln()
    };
    let expect = (per(&logits[..3], 2) + per(&logits[3..], 0)) / 2.0;
    assert_abs_diff_eq!(z.cross_entropy(&[2, 0]).unwrap().item(), expect, epsilon = 1e-12);

    assert!(matches!(z.cross_entropy(&[3, 0]), Err(ForgeError::Index { .. })));
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::new();
    let x = tape.leaf(&Tensor::<f64>::ones(&[2]).with_requires_grad(true));
    assert!(matches!(tape.backward(x.gelu()), Err(ForgeError::Contract(_))));
}

#[test]
fn backward_twice_doubles_gradient() {
    let x0 = random(&[4, 5], 9);
    let tape = Tape::new();
    let x = tape.leaf(&x0.with_requires_grad(true));
    let loss = x.gelu().mul(x).unwrap().sum();
    tape.backward(loss).unwrap();
    let once = tape.grad(x).unwrap();
    tape.backward(loss).unwrap();
    let twice = tape.grad(x).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn sum_of_squares_grad_check() {
    let err = finite_diff_grad_check(|_, x| Ok(x.mul(x)?.sum()), &random(&[4, 7], 3), 1e-5).unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn gelu_grad_check() {
    let err = finite_diff_grad_check(|_, x| Ok(x.gelu().sum()), &random(&[4, 8], 4), 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn step_outside_range_rejected() {
    let r = finite_diff_grad_check(|_, x| Ok(x.sum()), &random(&[2], 0), 1e-2);
    assert!(matches!(r, Err(ForgeError::Contract(_))));
}

type OpFn = Box<dyn for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> crate::Result<Var<'t, f64>>>;

fn op<F>(f: F) -> OpFn
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> crate::Result<Var<'t, f64>> + 'static,
{
    Box::new(f)
}

/// `sum(w * (g(x) - g(x0)))`: a random projection of the op output, centered
/// at the unperturbed point so that large outputs do not swamp the
/// difference quotient with rounding error.
fn centered_check(g: &OpFn, x0: &Tensor<f64>, seed: u64) -> f64 {
    let tape = Tape::new();
    let base = g(&tape, tape.constant(x0.clone())).unwrap().value();
    let w = random(base.shape(), seed);
    finite_diff_grad_check(
        |tape, x| {
            let y = g(tape, x)?.sub(tape.constant(base.clone()))?;
            Ok(y.mul(tape.constant(w.clone()))?.sum())
        },
        x0,
        1e-5,
    )
    .unwrap()
}

#[test]
fn every_op_passes_finite_differences() {
    let x = random(&[4, 16, 32], 21);
    let checks: Vec<(&str, OpFn)> = vec![
        ("softmax", Box::new(|_, x| Ok(x.softmax()))),
        ("gelu", Box::new(|_, x| Ok(x.gelu()))),
        ("scale", Box::new(|_, x| Ok(x.scale(0.3)))),
        ("layer_norm", Box::new(|tape, x| {
            let g = tape.constant(random(&[32], 5));
            let b = tape.constant(random(&[32], 6));
            x.layer_norm(g, b, 1e-6)
        })),
        ("matmul", Box::new(|tape, x| x.matmul(tape.constant(random(&[32, 8], 7))))),
        ("batched matmul", Box::new(|_, x| x.matmul(x.permute(&[0, 2, 1])?))),
        ("broadcast add/mul/sub", Box::new(|tape, x| {
            let b = tape.constant(random(&[32], 10));
            let m = tape.constant(random(&[4, 1, 1], 11));
            x.add(b)?.mul(m)?.sub(x.scale(0.5))
        })),
        ("narrow/concat", Box::new(|_, x| {
            let head = x.narrow(1, 0, 3)?;
            let tail = x.narrow(1, 5, 4)?;
            Var::concat(&[tail, head, x], 1)
        })),
        ("reshape/permute", Box::new(|_, x| x.reshape(&[4, 16, 4, 8])?.permute(&[0, 2, 1, 3]))),
        ("broadcast_to/mean", Box::new(|_, x| {
            let row = x.narrow(0, 1, 1)?;
            Ok(row.broadcast_to(&[3, 16, 32])?.gelu().mean())
        })),
        ("cross_entropy", Box::new(|_, x| {
            let labels: Vec<usize> = (0..64).map(|i| (i * 7) % 32).collect();
            x.reshape(&[64, 32])?.cross_entropy(&labels)
        })),
    ];
    for (i, (name, f)) in checks.iter().enumerate() {
        let err = centered_check(f, &x, 100 + i as u64);
        assert!(err < 1e-5, "{name}: {err}");
    }
}

#[test]
fn parameter_side_gradients_pass_finite_differences() {
    // gradients into the second operand of each binary op
    let x = random(&[4, 16, 32], 31);
    let w = random(&[32, 8], 32);
    let err = centered_check(&op(move |tape, p| tape.constant(x.clone()).matmul(p)), &w, 33);
    assert!(err < 1e-5, "matmul rhs: {err}");

    let x = random(&[4, 16, 32], 34);
    let gamma = random(&[32], 35);
    let err = centered_check(
        &op(move |tape, g| {
            let beta = tape.constant(Tensor::zeros(&[32]));
            tape.constant(x.clone()).layer_norm(g, beta, 1e-6)
        }),
        &gamma,
        36,
    );
    assert!(err < 1e-5, "layer_norm gamma: {err}");

    let x = random(&[4, 16, 32], 37);
    let s = random(&[32], 38);
    let err = centered_check(&op(move |tape, s| tape.constant(x.clone()).mul(s)), &s, 39);
    assert!(err < 1e-5, "broadcast mul rhs: {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        row in proptest::collection::vec(-30.0f64..30.0, 1..16),
        shift in -100.0f64..100.0,
    ) {
        let tape = Tape::new();
        let n = row.len();
        let y = tape.constant(t(&[n], &row)).softmax().data();
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let ys = tape.constant(t(&[n], &shifted)).softmax().data();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(row in proptest::collection::vec(-50.0f64..50.0, 2..64)) {
        let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1.0);
        let d = row.len();
        let tape = Tape::new();
        let y = tape
            .constant(t(&[d], &row))
            .layer_norm(tape.constant(Tensor::ones(&[d])), tape.constant(Tensor::zeros(&[d])), 1e-6)
            .unwrap()
            .data();
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((var - 1.0).abs() < 1e-4);
    }
}
