mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_seq, rng};
use xmodal::autodiff::{Tape, Var};
use xmodal::error::Result;
use xmodal::gradcheck::grad_check;
use xmodal::optim::LrSchedule;
use xmodal::params::{Bound, ParamId, ParamStore};
use xmodal::tensor::Tensor;

const INSTANCES: u64 = 100;
const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Unary = fn(&mut Tape<f64>, Var) -> Result<Var>;
type Binary = fn(&mut Tape<f64>, Var, Var) -> Result<Var>;

/// `sum(out * c)` for a fixed random `c`, so every output cell matters.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut r = rng(seed ^ 0xabc);
    let c = Tensor::new(shape.clone(), (0..shape.iter().product()).map(|_| r.random_range(-1.0..1.0)).collect())?;
    let c = tape.constant(c);
    let p = tape.mul(out, c)?;
    tape.sum(p)
}

/// Entries bounded away from zero so kinks (relu, abs) are not probed.
fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
}

fn store(parts: &[Tensor<f64>]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut s = ParamStore::new();
    let ids = parts.iter().enumerate().map(|(i, t)| s.add(format!("p{i}"), t.clone())).collect();
    (s, ids)
}

fn check_unary(name: &str, op: Unary, make: impl Fn(u64) -> Tensor<f64>) {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (s, ids) = store(&[make(seed)]);
        let f = |tape: &mut Tape<f64>, b: &Bound| {
            let y = op(tape, b.var(ids[0]))?;
            project(tape, y, seed)
        };
        worst = worst.max(grad_check(&s, STEP, None, f).unwrap().max_rel_error);
    }
    assert!(worst < TOL, "{name}: max rel error {worst:e}");
}

fn check_binary(name: &str, op: Binary, make: impl Fn(u64) -> (Tensor<f64>, Tensor<f64>)) {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (a, b) = make(seed);
        let (s, ids) = store(&[a, b]);
        let f = |tape: &mut Tape<f64>, bd: &Bound| {
            let y = op(tape, bd.var(ids[0]), bd.var(ids[1]))?;
            project(tape, y, seed)
        };
        worst = worst.max(grad_check(&s, STEP, None, f).unwrap().max_rel_error);
    }
    assert!(worst < TOL, "{name}: max rel error {worst:e}");
}

fn mat(seed: u64, rows: usize, cols: usize) -> Tensor<f64> {
    random_seq(&mut rng(seed), rows, cols, 1.0)
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let m = |s| mat(s, 3, 4);
    check_unary("exp", |t, a| t.exp(a), m);
    check_unary("tanh", |t, a| t.tanh(a), m);
    check_unary("sigmoid", |t, a| t.sigmoid(a), m);
    check_unary("softplus", |t, a| t.softplus(a), m);
    check_unary("square", |t, a| t.square(a), m);
    check_unary("relu", |t, a| t.relu(a), |s| away_from_zero(m(s)));
    check_unary("leaky_relu", |t, a| t.leaky_relu(a, 0.2), |s| away_from_zero(m(s)));
    check_unary("log", |t, a| t.log(a), |s| m(s).map(|x| x.abs() + 0.1));
    check_unary("scale", |t, a| t.scale(a, -1.7), m);
    check_unary("add_scalar", |t, a| t.add_scalar(a, 0.3), m);
}

#[test]
fn reductions_and_reshapes_match_finite_differences() {
    let m = |s| mat(s, 4, 3);
    check_unary("sum", |t, a| t.sum(a), m);
    check_unary("mean", |t, a| t.mean(a), m);
    check_unary("sum_rows", |t, a| t.sum_rows(a), m);
    check_unary("mean_rows", |t, a| t.mean_rows(a), m);
    check_unary("max_rows", |t, a| t.max_rows(a), m);
    check_unary("norm", |t, a| t.norm(a), m);
    check_unary("transpose", |t, a| t.transpose(a), m);
    check_unary("reshape", |t, a| t.reshape(a, &[2, 6]), m);
    check_unary("slice_rows", |t, a| t.slice_rows(a, 1, 3), m);
    check_unary(
        "concat_rows",
        |t, a| {
            let head = t.slice_rows(a, 0, 1)?;
            t.concat_rows(&[a, head, a])
        },
        m,
    );
}

#[test]
fn binary_primitives_match_finite_differences() {
    check_binary("add", |t, a, b| t.add(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 3, 4)));
    check_binary("sub", |t, a, b| t.sub(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 3, 4)));
    check_binary("mul", |t, a, b| t.mul(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 3, 4)));
    check_binary("add_row", |t, a, b| t.add_row(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 1, 4)));
    check_binary("matmul", |t, a, b| t.matmul(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 4, 2)));
    check_binary("matmul_nt", |t, a, b| t.matmul_nt(a, b), |s| (mat(s, 3, 4), mat(s + 1000, 2, 4)));
    check_binary("matmul_tn", |t, a, b| t.matmul_tn(a, b), |s| (mat(s, 4, 3), mat(s + 1000, 4, 2)));
    check_binary(
        "div_scalar",
        |t, a, b| t.div_scalar(a, b),
        |s| (mat(s, 3, 4), mat(s + 1000, 1, 1).map(|x| x.abs() + 0.5)),
    );
    check_binary(
        "gaussian_bank",
        |t, c, w| t.gaussian_bank(c, w, 7, 1e-3),
        |s| (mat(s, 1, 3).map(|x| x.tanh()), mat(s + 1000, 1, 3)),
    );
}

#[test]
fn backward_is_linear_in_the_loss() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let x = random_seq(&mut r, 3, 4, 1.0);
        let w = random_seq(&mut r, 4, 2, 1.0);
        let (s, ids) = store(&[x, w]);
        let first = |tape: &mut Tape<f64>, b: &Bound| -> Result<Var> {
            let y = tape.matmul(b.var(ids[0]), b.var(ids[1]))?;
            let y = tape.tanh(y)?;
            tape.sum(y)
        };
        let second = |tape: &mut Tape<f64>, b: &Bound| -> Result<Var> {
            let y = tape.square(b.var(ids[0]))?;
            let y = tape.exp(y)?;
            tape.mean(y)
        };
        let grads = |f: &dyn Fn(&mut Tape<f64>, &Bound) -> Result<Var>| {
            let mut tape = Tape::new();
            let b = tape.bind(&s, true);
            let l = f(&mut tape, &b).unwrap();
            let mut adj = tape.backward(l).unwrap();
            b.gradients(&s, &mut adj)
        };
        let g1 = grads(&first);
        let g2 = grads(&second);
        let both = grads(&|tape, b| {
            let a = first(tape, b)?;
            let c = second(tape, b)?;
            tape.add(a, c)
        });
        for ((a, b), s) in g1.iter().zip(&g2).zip(&both) {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(s.data()) {
                assert!((x + y - z).abs() <= 1e-12, "{x} + {y} vs {z}");
            }
        }
    }
}

proptest! {
    #[test]
    fn learning_rate_is_piecewise_constant_and_non_increasing(
        lr in 1e-4f64..1.0,
        period in 1usize..60,
        factor in 0.01f64..1.0,
        epoch in 0usize..500,
    ) {
        let s = LrSchedule { learning_rate: lr, momentum: 0.9, decay_period: period, decay_factor: factor };
        prop_assert!(s.effective_lr(epoch + 1) <= s.effective_lr(epoch));
        if (epoch + 1) % period != 0 {
            prop_assert_eq!(s.effective_lr(epoch + 1), s.effective_lr(epoch));
        }
    }
}
