//! Class-weighted logistic regression on per-stay summary features, used as a
//! sanity baseline next to the transformer variants.

use crate::cohort::TimeframeTensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogregPlan {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for LogregPlan {
    fn default() -> Self {
        LogregPlan { steps: 1000, lr: 1.0, l2: 1e-3 }
    }
}

/// Per column: mean over real frames, the most recent real frame, and the slope
/// between the first and last real frame.
pub fn stay_features(t: &TimeframeTensor) -> Vec<f64> {
    let l = t.l();
    let real: Vec<usize> = (0..t.p_max()).filter(|&j| t.pad_mask[j]).collect();
    let mut out = vec![0.0; 3 * l];
    if real.is_empty() {
        return out;
    }
    let row = |j: usize| &t.values[j * l..(j + 1) * l];
    for &j in &real {
        for (c, v) in row(j).iter().enumerate() {
            out[c] += *v as f64 / real.len() as f64;
        }
    }
    let (first, last) = (row(real[0]), row(*real.last().unwrap()));
    for c in 0..l {
        out[l + c] = last[c] as f64;
        out[2 * l + c] = (last[c] - first[c]) as f64;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LogisticRegression {
    /// Full-batch gradient descent on class-balanced log loss.
    pub fn fit(train: &[TimeframeTensor], plan: &LogregPlan) -> Result<Self> {
        let n1 = train.iter().filter(|t| t.label == 1).count();
        if n1 == 0 || n1 == train.len() {
            return Err(Error::DegenerateCohort(format!("logistic baseline needs both classes, got {n1} of {}", train.len())));
        }
        let xs: Vec<Vec<f64>> = train.iter().map(stay_features).collect();
        let d = xs[0].len();
        let w_pos = 0.5 / n1 as f64;
        let w_neg = 0.5 / (train.len() - n1) as f64;
        let mut model = LogisticRegression { weights: vec![0.0; d], bias: 0.0 };
        let mut gw = vec![0.0; d];
        for _ in 0..plan.steps {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (x, t) in xs.iter().zip(train) {
                let y = t.label as f64;
                let sw = if t.label == 1 { w_pos } else { w_neg };
                let r = sw * (sigmoid(model.logit_of(x)) - y);
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += r * xi;
                }
                gb += r;
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= plan.lr * (g + plan.l2 * *w);
            }
            model.bias -= plan.lr * gb;
        }
        Ok(model)
    }

    fn logit_of(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, stays: &[TimeframeTensor]) -> Vec<f64> {
        stays.iter().map(|t| sigmoid(self.logit_of(&stay_features(t)))).collect()
    }
}
