//! Expected-gradients attribution of the pre-sigmoid logit.

use rand::seq::index;
use rand::Rng;

use crate::cohort::TimeframeTensor;
use crate::error::{Error, Result};
use crate::model::{Batch, RatchetModel};
use crate::numcore::rng::{derive, seeded, Stream};
use crate::numcore::{Tape, Tensor};
use crate::scalar::Scalar;

/// Interpolation points per forward pass.
const CHUNK: usize = 64;

/// A scalar function of one stay's `p × l` input whose gradient can be taken.
pub trait LogitModel {
    /// Logit and input gradient at each point; every point uses `pad_mask`.
    fn logits_and_grads(&self, points: &[Vec<f64>], pad_mask: &[bool]) -> Result<Vec<(f64, Vec<f64>)>>;
}

impl<T: Scalar> LogitModel for RatchetModel<T> {
    fn logits_and_grads(&self, points: &[Vec<f64>], pad_mask: &[bool]) -> Result<Vec<(f64, Vec<f64>)>> {
        let (p, k, m) = (self.config.p_max, self.config.k, self.config.m);
        let l = k + m;
        let mut out = Vec::with_capacity(points.len());
        let mut rng = seeded(0);
        for chunk in points.chunks(CHUNK) {
            let n = chunk.len();
            let values: Vec<T> = chunk.iter().flat_map(|pt| pt.iter().map(|&v| T::of(v))).collect();
            let batch = Batch {
                values: Tensor::new(vec![n * p, l], values)?,
                pad_mask: pad_mask.iter().copied().cycle().take(n * p).collect(),
                labels: vec![0; n],
                b: n,
                p,
                k,
                m,
            };
            let mut tape = Tape::new();
            let params = self.params.bind(&mut tape, false);
            let x = tape.leaf(batch.values.clone(), true);
            let fwd = self.forward(&mut tape, &params, x, &batch, &[], false, &mut rng)?;
            let total = tape.sum(fwd.logits);
            tape.backward(total)?;
            let logits = tape.value(fwd.logits).data().to_vec();
            let grad = tape.grad(x);
            for (i, logit) in logits.iter().enumerate() {
                let g = grad.data()[i * p * l..(i + 1) * p * l].iter().map(|v| v.as_f64()).collect();
                out.push((logit.as_f64(), g));
            }
        }
        Ok(out)
    }
}

/// Per-cell attribution of one stay.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub stay_id: String,
    pub p: usize,
    pub l: usize,
    /// Row-major `p × l`; padded rows are zero.
    pub values: Vec<f64>,
    pub pad_mask: Vec<bool>,
    /// `f(x)`.
    pub logit: f64,
    /// Mean of `f` over the aligned baselines.
    pub baseline_logit: f64,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ attribution − (f(x) − mean f(b))`, relative to the latter.
    pub fn completeness_gap(&self) -> f64 {
        let target = self.logit - self.baseline_logit;
        (self.total() - target).abs() / target.abs().max(f64::MIN_POSITIVE)
    }
}

/// Puts baseline `b` on `x`'s timeframe grid: rows `x` does not have are zero,
/// rows `x` has but `b` lacks repeat `b`'s earliest real row.
pub fn align_baseline(x: &TimeframeTensor, b: &TimeframeTensor) -> Result<Vec<f64>> {
    if (x.p_max(), x.k, x.m) != (b.p_max(), b.k, b.m) {
        return Err(Error::Shape(format!("baseline {} does not match stay {}", b.stay_id, x.stay_id)));
    }
    let l = x.l();
    let first = (0..b.p_max()).find(|&j| b.pad_mask[j]);
    let mut out = vec![0.0; x.p_max() * l];
    for j in 0..x.p_max() {
        if !x.pad_mask[j] {
            continue;
        }
        let src = if b.pad_mask[j] { Some(j) } else { first };
        if let Some(s) = src {
            for c in 0..l {
                out[j * l + c] = b.values[s * l + c] as f64;
            }
        }
    }
    Ok(out)
}

/// Expected gradients: the mean of `(x − b) ⊙ ∇f(b + α(x − b))` over baselines and
/// `α ∈ (0, 1)`.
///
/// Each baseline gets an equal share of the samples (at least one, so the sample
/// count is raised to the number of baselines if needed) and its `α` values are
/// stratified over `(0, 1)`. Per-baseline means are then averaged, which makes
/// the estimate exact for linear `f` whatever the baseline count.
pub fn expected_gradients(
    model: &impl LogitModel,
    x: &TimeframeTensor,
    baselines: &[TimeframeTensor],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<Attribution> {
    if baselines.is_empty() {
        return Err(Error::Config("expected gradients needs at least one baseline".into()));
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let (p, l) = (x.p_max(), x.l());
    let xv: Vec<f64> = x.values.iter().map(|&v| v as f64).collect();
    let aligned: Vec<Vec<f64>> = baselines.iter().map(|b| align_baseline(x, b)).collect::<Result<_>>()?;
    let nb = aligned.len();
    let total = n_samples.max(nb);

    // Sample s uses baseline s % nb; its stratum among that baseline's samples is s / nb.
    let per_baseline = |b: usize| total / nb + usize::from(b < total % nb);
    let mut points = Vec::with_capacity(total);
    let mut owner = Vec::with_capacity(total);
    for s in 0..total {
        let b = s % nb;
        let alpha = ((s / nb) as f64 + rng.random::<f64>()) / per_baseline(b) as f64;
        points.push(aligned[b].iter().zip(&xv).map(|(&bi, &xi)| bi + alpha * (xi - bi)).collect::<Vec<f64>>());
        owner.push(b);
    }
    let evals = model.logits_and_grads(&points, &x.pad_mask)?;

    let mut per_b = vec![vec![0.0; p * l]; nb];
    for ((_, grad), &b) in evals.iter().zip(&owner) {
        for (acc, &g) in per_b[b].iter_mut().zip(grad) {
            *acc += g;
        }
    }
    let mut values = vec![0.0; p * l];
    for (b, gsum) in per_b.iter().enumerate() {
        let share = per_baseline(b) as f64 * nb as f64;
        for i in 0..p * l {
            values[i] += (xv[i] - aligned[b][i]) * gsum[i] / share;
        }
    }

    let mut ends = aligned.clone();
    ends.push(xv);
    let end_evals = model.logits_and_grads(&ends, &x.pad_mask)?;
    let logit = end_evals[nb].0;
    let baseline_logit = end_evals[..nb].iter().map(|e| e.0).sum::<f64>() / nb as f64;
    Ok(Attribution { stay_id: x.stay_id.clone(), p, l, values, pad_mask: x.pad_mask.clone(), logit, baseline_logit })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainConfig {
    pub n_stays: usize,
    pub n_baselines: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { n_stays: 100, n_baselines: 50, n_samples: 256, seed: 0 }
    }
}

/// Draws baselines uniformly from `background` and explains a uniform sample of
/// `targets`. Stay `i` of the sample uses its own derived generator, so results do
/// not depend on evaluation order.
pub fn explain_stays(
    model: &impl LogitModel,
    background: &[TimeframeTensor],
    targets: &[TimeframeTensor],
    cfg: &ExplainConfig,
) -> Result<Vec<Attribution>> {
    if background.is_empty() || targets.is_empty() {
        return Err(Error::Config("explanation needs non-empty background and target sets".into()));
    }
    let mut pick = derive(cfg.seed, Stream::Explain, 0);
    let mut bi = index::sample(&mut pick, background.len(), cfg.n_baselines.min(background.len())).into_vec();
    bi.sort_unstable();
    let baselines: Vec<TimeframeTensor> = bi.iter().map(|&i| background[i].clone()).collect();
    let mut ti = index::sample(&mut pick, targets.len(), cfg.n_stays.min(targets.len())).into_vec();
    ti.sort_unstable();
    ti.iter()
        .enumerate()
        .map(|(n, &i)| {
            let mut rng = derive(cfg.seed, Stream::Explain, 1 + n as u64);
            expected_gradients(model, &targets[i], &baselines, cfg.n_samples, &mut rng)
        })
        .collect()
}
