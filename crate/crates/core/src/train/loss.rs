use crate::error::{Error, Result};
use crate::model::Batch;
use crate::numcore::{Tape, Var};
use crate::scalar::Scalar;

const EPS: f64 = 1e-7;

/// Focal loss of one probability: `−α_t (1 − p_t)^γ ln p_t`, with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn focal_loss(p: f64, y: u8, gamma: f64, alpha_pos: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let (pt, at) = if y == 1 { (p, alpha_pos) } else { (1.0 - p, 1.0 - alpha_pos) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Batch-mean focal loss of `sigmoid(logits)` on the tape.
pub fn focal_batch_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[u8], gamma: f64, alpha_pos: f64) -> Result<Var> {
    let p = tape.sigmoid(logits);
    let y: Vec<T> = labels.iter().map(|&v| T::of(v as f64)).collect();
    let per = tape.focal(p, &y, T::of(gamma), Some(T::of(alpha_pos)))?;
    Ok(tape.mean(per))
}

/// Mean over masked rows of the numerical-column MSE plus the categorical-column
/// BCE on logits, each averaged over its columns.
pub fn masked_pretrain_loss<T: Scalar>(tape: &mut Tape<T>, recon: Var, batch: &Batch<T>, masked: &[usize]) -> Result<Var> {
    if masked.is_empty() {
        return Err(Error::Contract("pretraining loss needs at least one masked timeframe".into()));
    }
    if let Some(&i) = masked.iter().find(|&&i| i >= batch.pad_mask.len() || !batch.pad_mask[i]) {
        return Err(Error::Contract(format!("masked position {i} is not a real timeframe")));
    }
    let (k, l) = (batch.k, batch.l());
    let pred = tape.gather_rows(recon, masked)?;
    let src = batch.values.data();
    let mut total: Option<Var> = None;
    let mut push = |tape: &mut Tape<T>, term: Var| -> Result<()> {
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
        Ok(())
    };
    if k > 0 {
        let target: Vec<T> = masked.iter().flat_map(|&i| src[i * l..i * l + k].iter().copied()).collect();
        let target = tape.constant(crate::numcore::Tensor::new(vec![masked.len(), k], target)?);
        let num = tape.slice(pred, 1, 0, k)?;
        let diff = tape.sub(num, target)?;
        let sq = tape.mul(diff, diff)?;
        let mse = tape.mean(sq);
        push(tape, mse)?;
    }
    if l > k {
        let target: Vec<T> = masked.iter().flat_map(|&i| src[i * l + k..(i + 1) * l].iter().copied()).collect();
        let cat = tape.slice(pred, 1, k, l)?;
        let bce = tape.bce_with_logits(cat, &target)?;
        let bce = tape.mean(bce);
        push(tape, bce)?;
    }
    total.ok_or_else(|| Error::Contract("empty feature schema".into()))
}
