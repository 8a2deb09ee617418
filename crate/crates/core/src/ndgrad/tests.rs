use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn vec1(v: &[f64]) -> Tensor<f64> {
    Tensor::vector(v.to_vec()).unwrap()
}

/// `sum(out * w)` for a fixed random `w`, so no gradient is trivially zero.
fn weighted_sum(g: &mut Graph<f64>, out: Var, w: &Tensor<f64>) -> crate::Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(out, wv)?;
    g.sum(p)
}

#[test]
fn add_is_elementwise() {
    let mut g = Graph::new();
    let a = g.constant(vec1(&[1.0, 2.0]));
    let b = g.constant(vec1(&[3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn log_inverts_exp() {
    let mut g = Graph::new();
    let x = g.constant(vec1(&[0.5, 2.0]));
    let e = g.exp(x).unwrap();
    let l = g.log(e).unwrap();
    for (a, b) in g.value(l).data().iter().zip([0.5, 2.0]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn square_backward() {
    let mut g = Graph::new();
    let x = g.param(vec1(&[3.0]));
    let y = g.square(x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn domain_errors() {
    let mut g = Graph::new();
    let x = g.constant(vec1(&[1.0, 0.0]));
    assert!(matches!(g.log(x), Err(Error::Domain { .. })));
    let y = g.constant(vec1(&[1.0, 1.0]));
    assert!(matches!(g.div(y, x), Err(Error::Domain { .. })));
    assert!(matches!(
        g.elementwise_scalar(BinaryOp::Div, y, 0.0),
        Err(Error::Domain { .. })
    ));
    let z = g.constant(vec1(&[1.0, 2.0, 3.0]));
    assert!(matches!(g.add(x, z), Err(Error::Shape { .. })));
}

#[test]
fn overflow_is_a_hard_error() {
    let mut g = Graph::new();
    let x = g.constant(vec1(&[1000.0]));
    assert!(matches!(g.exp(x), Err(Error::NonFinite { .. })));
}

#[test]
fn scalar_operand_forms() {
    let mut g = Graph::new();
    let x = g.param(vec1(&[2.0, -4.0]));
    let a = g.elementwise_scalar(BinaryOp::Add, x, 1.0).unwrap();
    let s = g.elementwise_scalar(BinaryOp::Sub, a, 3.0).unwrap();
    let m = g.elementwise_scalar(BinaryOp::Mul, s, 2.0).unwrap();
    let d = g.elementwise_scalar(BinaryOp::Div, m, 4.0).unwrap();
    assert_eq!(g.value(d).data(), &[0.0, -3.0]);
    let t = g.sum(d).unwrap();
    g.backward(t).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.5, 0.5]);
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::identity(2));
    let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let c = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let col = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let p = g.matmul(r, col).unwrap();
    assert_eq!(g.value(p).data(), &[11.0]);
    assert_eq!(g.value(p).shape(), &[1, 1]);

    assert!(matches!(g.matmul(r, r), Err(Error::Shape { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let err = grad_check(
        |g, x| {
            let bv = g.constant(b.clone());
            let c = g.matmul(x, bv)?;
            g.sum(c)
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err}");

    // dC/dB side
    let err = grad_check(
        |g, x| {
            let av = g.constant(a.clone());
            let c = g.matmul(av, x)?;
            g.sum(c)
        },
        &b,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn softmax_worked_rows() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 0.0, 1000.0, 0.0]).unwrap());
    let s = g.softmax_rows(x).unwrap();
    let v = g.value(s).data().to_vec();
    assert_eq!(&v[..2], &[0.5, 0.5]);
    let e = std::f64::consts::E;
    assert!((v[2] - e / (e + 1.0)).abs() < 1e-15);
    assert!((v[3] - 1.0 / (e + 1.0)).abs() < 1e-15);
    assert!((v[4] - 1.0).abs() < 1e-15);
    assert!(v[5] < 1e-300);
}

#[test]
fn l2_normalize_cases() {
    let mut g = Graph::new();
    let x = g.constant(vec1(&[3.0, 4.0]));
    let n = g.l2_normalize(x).unwrap();
    assert!((g.value(n).data()[0] - 0.6).abs() < 1e-15);
    assert!((g.value(n).data()[1] - 0.8).abs() < 1e-15);
    let n2 = g.l2_normalize(n).unwrap();
    for (a, b) in g.value(n).data().iter().zip(g.value(n2).data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let z = g.constant(vec1(&[0.0, 1e-14]));
    assert!(matches!(g.l2_normalize(z), Err(Error::Domain { .. })));
}

#[test]
fn l2_normalize_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = rand_tensor(&mut rng, &[5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[5], -1.0, 1.0);
    let err = grad_check(
        |g, x| {
            let n = g.l2_normalize(x)?;
            weighted_sum(g, n, &w)
        },
        &v,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn backward_contract() {
    let mut g = Graph::new();
    let x = g.param(vec1(&[1.0, 2.0]));
    let y = g.square(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Graph(_))));
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Graph(_))));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1]).unwrap());
    let s = g.softmax_rows(x).unwrap();
    let t = g.sum(s).unwrap();
    g.backward(t).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|v: &f64| v.abs() < 1e-15));
}

#[test]
fn shared_input_accumulates() {
    // y = x*x + 3x feeds x to two consumers; dy/dx = 2x + 3
    let x0 = vec1(&[1.5, -2.0]);
    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let lin = g.scale(x, 3.0).unwrap();
    let y = g.add(sq, lin).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0, -1.0]);

    let err = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            let lin = g.scale(x, 3.0)?;
            let y = g.add(sq, lin)?;
            g.sum(y)
        },
        &x0,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-7);
}

#[test]
fn grad_check_exact_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[6], 0.5, 2.0);
    let err = grad_check(
        |g, x| {
            let s = g.square(x)?;
            g.sum(s)
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

type OpCase = fn(&mut Graph<f64>, Var, &Tensor<f64>) -> crate::Result<Var>;

#[test]
fn every_op_passes_grad_check_over_seeds() {
    let cases: Vec<(&str, OpCase)> = vec![
        ("add", |g, x, w| {
            let c = g.constant(w.clone());
            g.add(x, c)
        }),
        ("sub", |g, x, w| {
            let c = g.constant(w.clone());
            g.sub(c, x)
        }),
        ("mul", |g, x, w| {
            let c = g.constant(w.clone());
            g.mul(x, c)
        }),
        ("div", |g, x, w| {
            let c = g.constant(w.clone());
            g.div(c, x)
        }),
        ("exp", |g, x, _| g.exp(x)),
        ("log", |g, x, _| g.log(x)),
        ("neg", |g, x, _| g.neg(x)),
        ("square", |g, x, _| g.square(x)),
        ("matmul", |g, x, w| {
            let c = g.constant(w.clone());
            let ct = g.transpose(c)?;
            g.matmul(x, ct)
        }),
        ("add_bias", |g, x, w| {
            let b = g.constant(Tensor::vector(w.row(0).to_vec())?);
            let y = g.add_bias(x, b)?;
            g.square(y)
        }),
        ("leaky_relu", |g, x, _| {
            let s = g.elementwise_scalar(BinaryOp::Sub, x, 1.25)?;
            g.leaky_relu(s, 0.01)
        }),
        ("sigmoid", |g, x, _| g.sigmoid(x)),
        ("softmax_rows", |g, x, _| g.softmax_rows(x)),
        ("l2_normalize_rows", |g, x, _| g.l2_normalize_rows(x)),
        ("sum_rows", |g, x, _| {
            let s = g.sum_rows(x)?;
            g.square(s)
        }),
        ("reshape", |g, x, _| {
            let r = g.reshape(x, &[12])?;
            g.square(r)
        }),
        ("select_rows", |g, x, _| {
            let r = g.select_rows(x, vec![2, 0, 2])?;
            g.square(r)
        }),
        ("masked_row_sum", |g, x, _| {
            let m = g.masked_row_sum(x, vec![vec![0, 2], vec![1], vec![3, 0, 1]])?;
            g.square(m)
        }),
    ];
    for (name, case) in cases {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Strictly positive inputs keep log/div in their domain.
            let x = rand_tensor(&mut rng, &[3, 4], 0.2, 2.5);
            let w = rand_tensor(&mut rng, &[3, 4], 0.5, 1.5);
            let v = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let err = grad_check(
                |g, xv| {
                    let out = case(g, xv, &w)?;
                    let shape = g.value(out).shape().to_vec();
                    let weights = Tensor::new(&shape, v.data()[..g.value(out).len()].to_vec())?;
                    weighted_sum(g, out, &weights)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err}");
        }
    }
}

mod props {
    use proptest::prelude::*;

    use super::super::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(3, 4, vals).unwrap());
            let s = g.softmax_rows(x).unwrap();
            for r in 0..3 {
                let row = g.value(s).row(r);
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }

        #[test]
        fn l2_normalize_unit_and_idempotent(vals in proptest::collection::vec(-10.0f64..10.0, 6)) {
            prop_assume!(vals.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(vals).unwrap());
            let n = g.l2_normalize(x).unwrap();
            let nrm = crate::scalar::norm(g.value(n).data());
            prop_assert!((nrm - 1.0).abs() <= 1e-10);
            let n2 = g.l2_normalize(n).unwrap();
            for (a, b) in g.value(n).data().iter().zip(g.value(n2).data()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
