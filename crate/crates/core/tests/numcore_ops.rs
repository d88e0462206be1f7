mod common;

use common::{check_op, randn, uniform};
use rand::Rng;
use ratchet_core::numcore::rng::seeded;
use ratchet_core::numcore::{Tape, Tensor, Var};
use ratchet_core::Error;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-2;
const H: f32 = 1e-2;

fn assert_grads(name: &str, errors: &[f64]) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e <= TOL, "{name}: input {i} relative gradient error {e:.2e}");
    }
}

fn sweep(name: &str, build: impl Fn(&mut rand_chacha::ChaCha8Rng) -> (Vec<Tensor<f32>>, Vec<bool>), op: &dyn Fn(&mut Tape<f32>, &[Var]) -> Var) {
    for seed in 0..SEEDS {
        let mut rng = seeded(1000 + seed);
        let (inputs, diff) = build(&mut rng);
        assert_grads(&format!("{name} seed {seed}"), &check_op(&inputs, &diff, seed, H, op));
    }
}

fn t(shape: &[usize], v: &[f64]) -> Tensor<f32> {
    Tensor::from_f64(shape, v).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::eye(2));
    let b = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).shape(), &[1, 1]);
    assert_eq!(tape.value(c).data(), &[11.0]);

    let bad = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(tape.matmul(a, bad), Err(Error::Shape(_))));
}

#[test]
fn matmul_sum_gradient_matches_fd_at_step_1e3() {
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let a = randn(&[3, 4], &mut rng);
        let b = randn(&[4, 2], &mut rng);
        let loss = |xs: &[Tensor<f32>]| -> f64 {
            let mut tape = Tape::new();
            let (a, b) = (tape.constant(xs[0].clone()), tape.constant(xs[1].clone()));
            let c = tape.matmul(a, b).unwrap();
            tape.value(c).data().iter().map(|&v| v as f64).sum()
        };
        let numeric = common::finite_difference(&[a.clone(), b.clone()], 1e-3, &loss);
        let mut tape = Tape::new();
        let (av, bv) = (tape.param(a), tape.constant(b));
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        let analytic: Vec<f64> = tape.grad(av).data().iter().map(|&x| x as f64).collect();
        let err = common::rel_error(&analytic, &numeric[0]);
        assert!(err < 1e-3, "seed {seed}: {err:.2e}");
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[2], &[1000.0, 1000.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 0.25).abs() < 1e-6 && (v[1] - 0.75).abs() < 1e-6, "{v:?}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = seeded(3);
    for axis in 0..3 {
        let mut tape = Tape::new();
        let x = tape.constant(randn(&[4, 5, 6], &mut rng).map(|v| v * 20.0));
        let y = tape.softmax(x, axis).unwrap();
        let s = tape.sum_axis(y, axis).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0).abs() <= 1e-5, "axis {axis}: {v}");
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f32>::new();
    let gain = tape.constant(Tensor::full(&[3], 1.0));
    let bias = tape.constant(Tensor::zeros(&[3]));
    let x = tape.constant(t(&[1, 3], &[4.0, 4.0, 4.0]));
    let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

    let gain = tape.constant(Tensor::full(&[2], 1.0));
    let bias = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t(&[1, 2], &[1.0, 3.0]));
    let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4, "{v:?}");
}

#[test]
fn dropout_examples() {
    let mut rng = seeded(9);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[100_000], 1.0));
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.7, false, &mut rng).unwrap(), x);
    assert!(matches!(tape.dropout(x, 1.0, true, &mut rng), Err(Error::Config(_))));

    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let v = tape.value(y).data();
    let survivors = v.iter().filter(|&&e| e != 0.0).count() as f64 / v.len() as f64;
    assert!((survivors - 0.5).abs() <= 0.01, "{survivors}");
    assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
}

#[test]
fn backward_examples() {
    let mut rng = seeded(11);
    let xv = randn(&[3, 2], &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(xv.clone());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::new();
    let x = tape.param(xv.clone());
    let unused = tape.param(xv.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    for (g, v) in tape.grad(x).data().iter().zip(xv.data()) {
        assert_eq!(*g, 2.0 * v);
    }
    assert!(tape.grad(unused).data().iter().all(|&g| g == 0.0));

    assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));
    tape.clear();
    assert!(tape.is_empty());
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = seeded(5);
        let mut tape = Tape::new();
        let x = tape.param(randn(&[8, 6], &mut rng));
        let w = tape.param(randn(&[6, 6], &mut rng));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.gelu(h);
        let h = tape.dropout(h, 0.3, true, &mut rng).unwrap();
        let h = tape.softmax(h, 1).unwrap();
        let l = tape.mean(h);
        let l = tape.scale(l, 3.0);
        tape.backward(l).unwrap();
        (tape.value(h).clone(), tape.grad(x), tape.grad(w))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
    assert_eq!(a.2.data(), b.2.data());
}

#[test]
fn gradcheck_elementwise_broadcast() {
    sweep(
        "add",
        |r| (vec![randn(&[3, 4], r), randn(&[4], r)], vec![true, true]),
        &|tp, v| tp.add(v[0], v[1]).unwrap(),
    );
    sweep(
        "sub",
        |r| (vec![randn(&[2, 3, 4], r), randn(&[1, 3, 1], r)], vec![true, true]),
        &|tp, v| tp.sub(v[0], v[1]).unwrap(),
    );
    sweep(
        "mul",
        |r| (vec![randn(&[5, 3, 1], r), randn(&[3, 4], r)], vec![true, true]),
        &|tp, v| tp.mul(v[0], v[1]).unwrap(),
    );
    sweep("scale", |r| (vec![randn(&[7], r)], vec![true]), &|tp, v| tp.scale(v[0], -1.7));
}

#[test]
fn gradcheck_unary() {
    let away_from_zero = |r: &mut rand_chacha::ChaCha8Rng| {
        let x = Tensor::from_fn(&[12], |_| {
            let m: f32 = r.random_range(0.1..2.0);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        });
        (vec![x], vec![true])
    };
    sweep("relu", away_from_zero, &|tp, v| tp.relu(v[0]));
    sweep("gelu", |r| (vec![randn(&[12], r)], vec![true]), &|tp, v| tp.gelu(v[0]));
    sweep("sigmoid", |r| (vec![randn(&[12], r)], vec![true]), &|tp, v| tp.sigmoid(v[0]));
    sweep("tanh", |r| (vec![randn(&[12], r)], vec![true]), &|tp, v| tp.tanh(v[0]));
    sweep("exp", |r| (vec![randn(&[12], r)], vec![true]), &|tp, v| tp.exp(v[0]));
    sweep("log", |r| (vec![uniform(&[12], 0.5, 3.0, r)], vec![true]), &|tp, v| tp.log(v[0]));
}

#[test]
fn gradcheck_products() {
    sweep(
        "matmul",
        |r| (vec![randn(&[2, 3, 4], r), randn(&[4, 5], r)], vec![true, true]),
        &|tp, v| tp.matmul(v[0], v[1]).unwrap(),
    );
    sweep(
        "batch_matmul",
        |r| (vec![randn(&[3, 2, 4], r), randn(&[3, 4, 5], r)], vec![true, true]),
        &|tp, v| tp.batch_matmul(v[0], v[1], false).unwrap(),
    );
    sweep(
        "batch_matmul_t",
        |r| (vec![randn(&[3, 2, 4], r), randn(&[3, 5, 4], r)], vec![true, true]),
        &|tp, v| tp.batch_matmul(v[0], v[1], true).unwrap(),
    );
}

#[test]
fn gradcheck_layout() {
    sweep("permute", |r| (vec![randn(&[2, 3, 4], r)], vec![true]), &|tp, v| tp.permute(v[0], &[2, 0, 1]).unwrap());
    sweep("transpose", |r| (vec![randn(&[2, 3, 4], r)], vec![true]), &|tp, v| tp.transpose(v[0]).unwrap());
    sweep("reshape", |r| (vec![randn(&[2, 6], r)], vec![true]), &|tp, v| tp.reshape(v[0], &[3, 4]).unwrap());
    sweep(
        "concat",
        |r| (vec![randn(&[2, 3, 2], r), randn(&[2, 1, 2], r)], vec![true, true]),
        &|tp, v| tp.concat(&[v[0], v[1]], 1).unwrap(),
    );
    sweep("slice", |r| (vec![randn(&[3, 5, 2], r)], vec![true]), &|tp, v| tp.slice(v[0], 1, 1, 4).unwrap());
    sweep("gather", |r| (vec![randn(&[4, 3], r)], vec![true]), &|tp, v| tp.gather_rows(v[0], &[2, 0, 2, 3]).unwrap());
    sweep("scatter", |r| (vec![randn(&[3, 2], r)], vec![true]), &|tp, v| tp.scatter_rows(v[0], &[4, 1, 4], 5).unwrap());
}

#[test]
fn gradcheck_reductions() {
    sweep("sum", |r| (vec![randn(&[3, 4], r)], vec![true]), &|tp, v| tp.sum(v[0]));
    sweep("mean", |r| (vec![randn(&[3, 4], r)], vec![true]), &|tp, v| tp.mean(v[0]));
    sweep("sum_axis", |r| (vec![randn(&[3, 4, 2], r)], vec![true]), &|tp, v| tp.sum_axis(v[0], 1).unwrap());
    sweep("mean_axis", |r| (vec![randn(&[3, 4], r)], vec![true]), &|tp, v| tp.mean_axis(v[0], 0).unwrap());
}

#[test]
fn gradcheck_normalizers() {
    sweep("softmax0", |r| (vec![randn(&[4, 3], r)], vec![true]), &|tp, v| tp.softmax(v[0], 0).unwrap());
    sweep("softmax1", |r| (vec![randn(&[4, 3], r)], vec![true]), &|tp, v| tp.softmax(v[0], 1).unwrap());
    sweep(
        "gated_softmax",
        |r| (vec![randn(&[4, 3, 5], r), uniform(&[2, 5], 0.2, 1.0, r)], vec![true, true]),
        &|tp, v| tp.gated_softmax(v[0], v[1]).unwrap(),
    );
    sweep(
        "layer_norm",
        |r| (vec![randn(&[3, 5], r), randn(&[5], r), randn(&[5], r)], vec![true, true, true]),
        &|tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
    );
    sweep("dropout", |r| (vec![randn(&[20], r)], vec![true]), &|tp, v| {
        let mut rng = seeded(77);
        tp.dropout(v[0], 0.4, true, &mut rng).unwrap()
    });
}

#[test]
fn gradcheck_losses() {
    sweep(
        "bce_with_logits",
        |r| (vec![randn(&[10], r).map(|x| 2.0 * x)], vec![true]),
        &|tp, v| {
            let target: Vec<f32> = (0..10).map(|i| (i % 2) as f32).collect();
            tp.bce_with_logits(v[0], &target).unwrap()
        },
    );
    sweep(
        "focal",
        |r| (vec![uniform(&[10], 0.05, 0.95, r)], vec![true]),
        &|tp, v| {
            let labels: Vec<f32> = (0..10).map(|i| (i % 3 == 0) as u8 as f32).collect();
            tp.focal(v[0], &labels, 2.0, Some(0.8)).unwrap()
        },
    );
    sweep(
        "kl_rows",
        |r| (vec![randn(&[2, 3, 4], r), randn(&[2, 3, 4], r)], vec![true, true]),
        &|tp, v| {
            let p = tp.softmax(v[0], 2).unwrap();
            let q = tp.softmax(v[1], 2).unwrap();
            tp.kl_rows(p, q, &[1.0, 0.0, 2.0, 1.0, 1.0, 0.5]).unwrap()
        },
    );
}

#[test]
fn gated_softmax_zero_gate_removes_key() {
    let mut rng = seeded(21);
    let scores = randn(&[2, 3, 4], &mut rng);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(scores.clone());
    let g = tape.constant(t(&[1, 4], &[1.0, 0.0, 1.0, 1.0]));
    let y = tape.gated_softmax(x, g).unwrap();
    let trimmed: Vec<f32> = scores.data().chunks(4).flat_map(|r| [r[0], r[2], r[3]]).collect();
    let x2 = tape.constant(Tensor::new(vec![2, 3, 3], trimmed).unwrap());
    let y2 = tape.softmax(x2, 2).unwrap();
    for (row, row2) in tape.value(y).data().chunks(4).zip(tape.value(y2).data().chunks(3)) {
        assert_eq!(row[1], 0.0);
        assert_eq!([row[0], row[2], row[3]], [row2[0], row2[1], row2[2]]);
    }

    let all_off = tape.constant(Tensor::zeros(&[1, 4]));
    let z = tape.gated_softmax(x, all_off).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
}
