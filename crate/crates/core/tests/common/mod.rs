//! Shared test oracles. Nothing here calls `Tape::backward`; gradients are
//! estimated from forward values only.
#![allow(dead_code)]

pub mod gradcheck;

use rand::Rng;
use ratchet_core::numcore::rng::seeded;
use ratchet_core::numcore::{Tape, Tensor, Var};

/// Central finite differences of `loss(inputs)` with respect to every input entry.
pub fn finite_difference(inputs: &[Tensor<f32>], h: f32, loss: &dyn Fn(&[Tensor<f32>]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f32>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = loss(&work);
            work[i].data_mut()[j] = orig - h;
            let down = loss(&work);
            work[i].data_mut()[j] = orig;
            // the effective step after f32 rounding
            let step = ((orig + h) as f64) - ((orig - h) as f64);
            g.push((up - down) / step);
        }
        out.push(g);
    }
    out
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-9 {
        0.0
    } else {
        diff / denom
    }
}

/// Random projection weights so that `Σ w·out` exercises every output entry.
pub fn projection(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = seeded(seed ^ 0x5eed);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Checks the tape gradient of `Σ w ⊙ op(inputs)` against finite differences for
/// the inputs flagged in `differentiable`. Returns the per-input relative errors.
pub fn check_op(
    inputs: &[Tensor<f32>],
    differentiable: &[bool],
    seed: u64,
    h: f32,
    op: &dyn Fn(&mut Tape<f32>, &[Var]) -> Var,
) -> Vec<f64> {
    let forward = |xs: &[Tensor<f32>]| -> Tensor<f32> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = op(&mut tape, &vars);
        tape.value(out).clone()
    };
    let n_out = forward(inputs).numel();
    let w = projection(n_out, seed);
    let loss = |xs: &[Tensor<f32>]| -> f64 {
        forward(xs).data().iter().zip(&w).map(|(&o, &wk)| o as f64 * wk as f64).sum()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().zip(differentiable).map(|(x, &d)| tape.leaf(x.clone(), d)).collect();
    let out = op(&mut tape, &vars);
    let wv = tape.constant(Tensor::new(tape.shape(out).to_vec(), w.clone()).unwrap());
    let prod = tape.mul(out, wv).unwrap();
    let total = tape.sum(prod);
    tape.backward(total).unwrap();

    let numeric = finite_difference(inputs, h, &loss);
    vars.iter()
        .zip(differentiable)
        .zip(numeric)
        .filter(|((_, &d), _)| d)
        .map(|((&v, _), n)| {
            let a: Vec<f64> = tape.grad(v).data().iter().map(|&x| x as f64).collect();
            rel_error(&a, &n)
        })
        .collect()
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `P(score⁺ > score⁻) + ½·P(tie)` over every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0usize);
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

/// A normalized-looking stay: `n_real` trailing real rows of standard-normal
/// numerical values and Bernoulli(0.3) code indicators.
pub fn random_stay(p: usize, k: usize, m: usize, n_real: usize, label: u8, rng: &mut impl Rng) -> ratchet_core::cohort::TimeframeTensor {
    use rand_distr::{Distribution, StandardNormal};
    let l = k + m;
    let mut values = vec![0.0f32; p * l];
    let pad_mask: Vec<bool> = (0..p).map(|j| j + n_real >= p).collect();
    for j in (p - n_real)..p {
        for c in 0..k {
            values[j * l + c] = StandardNormal.sample(rng);
        }
        for c in k..l {
            values[j * l + c] = rng.random_bool(0.3) as u8 as f32;
        }
    }
    ratchet_core::cohort::TimeframeTensor {
        stay_id: format!("r{}", rng.random::<u32>()),
        label,
        admission_year: 2010,
        k,
        m,
        values,
        pad_mask,
        missing: vec![false; k],
    }
}
