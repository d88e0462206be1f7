use crate::error::{Error, Result};
use crate::numcore::ParamStore;
use crate::scalar::Scalar;

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One AdamW update: `θ ← θ·(1 − η_t λ) − η_t · m̂ / (√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
    opt: AdamW,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(opt.beta1), T::of(opt.beta2));
    let c1 = T::one() / (T::one() - b1.powi(t));
    let c2 = T::one() / (T::one() - b2.powi(t));
    let (lr_t, eps) = (T::of(lr), T::of(opt.eps));
    let shrink = T::one() - T::of(lr * weight_decay);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
        let m = state.m.get_mut(name).ok_or_else(|| Error::Shape(format!("no optimizer state for {name}")))?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::Shape(format!("{name}: param {:?}, grad {:?}", p.shape(), g.shape())));
        }
        let v = state.v.get_mut(name).expect("m and v share names");
        let (pd, gd, md, vd) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            md[i] = b1 * md[i] + (T::one() - b1) * gd[i];
            vd[i] = b2 * vd[i] + (T::one() - b2) * gd[i] * gd[i];
            pd[i] = pd[i] * shrink - lr_t * (md[i] * c1) / ((vd[i] * c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup to `base_lr` over `warmup` steps, then linear decay to zero at `total`.
pub fn warmup_schedule(step: usize, warmup: usize, total: usize, base_lr: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::Config(format!("warmup_steps={warmup} must be below the total step count {total}")));
    }
    if step >= total {
        return Err(Error::Contract(format!("step {step} is past the last step {}", total - 1)));
    }
    Ok(if step < warmup {
        base_lr * (step as f64 / warmup as f64)
    } else {
        base_lr * ((total - step) as f64 / (total - warmup) as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn schedule_shape() {
        assert_eq!(warmup_schedule(0, 10, 110, 1e-3).unwrap(), 0.0);
        assert_eq!(warmup_schedule(10, 10, 110, 1e-3).unwrap(), 1e-3);
        assert!((warmup_schedule(60, 10, 110, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
        assert!(matches!(warmup_schedule(0, 10, 10, 1e-3), Err(Error::Config(_))));
    }

    #[test]
    fn decoupled_decay() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.0, AdamW::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5, -2.0]);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.3, AdamW::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5 * (1.0 - 0.1 * 0.3), -2.0 * (1.0 - 0.1 * 0.3)]);
    }
}
