//! Finite-difference check of every model parameter.

use rand::Rng;
use ratchet_core::cohort::TimeframeTensor;
use ratchet_core::model::{Batch, EmbedderKind, ModelConfig, RatchetModel};
use ratchet_core::numcore::rng::seeded;
use ratchet_core::numcore::{ParamStore, Tape, Tensor};

use super::{random_stay, rel_error};

pub fn micro(k: usize, m: usize, p_max: usize, embedder: EmbedderKind, gct_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.0,
        p_max,
        k,
        m,
        embedder,
        gct_layers,
        gct_kl_weight: 0.01,
    }
}

pub fn stays(n: usize, p: usize, k: usize, m: usize, seed: u64) -> Vec<TimeframeTensor> {
    let mut rng = seeded(seed);
    (0..n).map(|i| {
        let real = rng.random_range(1..=p);
        random_stay(p, k, m, real, (i % 2) as u8, &mut rng)
    }).collect()
}

/// Classification BCE + a random projection of the masked-row reconstruction +
/// the GCT attention penalty, so every parameter is on the loss path.
fn probe_loss(model: &RatchetModel<f64>, batch: &Batch<f64>, masked: &[usize], w: &[f64], grads: bool) -> (f64, Option<ParamStore<f64>>) {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, grads);
    let f = model.forward_batch(&mut tape, &p, batch, masked, false, &mut seeded(0)).unwrap();
    let targets: Vec<f64> = batch.labels.iter().map(|&y| y as f64).collect();
    let bce = tape.bce_with_logits(f.logits, &targets).unwrap();
    let mut loss = tape.mean(bce);
    let rec = model.reconstruct(&mut tape, &p, &f).unwrap();
    let rec = tape.gather_rows(rec, masked).unwrap();
    let wv = tape.constant(Tensor::new(tape.shape(rec).to_vec(), w.to_vec()).unwrap());
    let proj = tape.mul(rec, wv).unwrap();
    let proj = tape.sum(proj);
    loss = tape.add(loss, proj).unwrap();
    if let Some(kl) = f.gct_kl {
        let kl = tape.scale(kl, 0.5);
        loss = tape.add(loss, kl).unwrap();
    }
    let value = tape.value(loss).item();
    if !grads {
        return (value, None);
    }
    tape.backward(loss).unwrap();
    (value, Some(model.params.grads_from(&tape, &p)))
}

/// Per-tensor relative error between backprop and central differences.
pub fn gradient_check(cfg: ModelConfig, seed: u64) -> Vec<(String, f64)> {
    let mut model = RatchetModel::<f64>::new(cfg.clone(), &mut seeded(seed)).unwrap();
    let data = stays(3, cfg.p_max, cfg.k, cfg.m, seed + 1);
    let batch = Batch::<f64>::from_slice(&data).unwrap();
    let real = batch.real_rows();
    let masked: Vec<usize> = real.iter().copied().step_by(3).collect();
    let mut rng = seeded(seed + 2);
    let w: Vec<f64> = (0..masked.len() * cfg.l()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = probe_loss(&model, &batch, &masked, &w, true);
    let grads = grads.unwrap();
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let h = 1e-5;
    let mut out = Vec::new();
    for name in names {
        let n = model.params.get(&name).unwrap().numel();
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = model.params.get(&name).unwrap().data()[j];
            model.params.get_mut(&name).unwrap().data_mut()[j] = orig + h;
            let up = probe_loss(&model, &batch, &masked, &w, false).0;
            model.params.get_mut(&name).unwrap().data_mut()[j] = orig - h;
            let down = probe_loss(&model, &batch, &masked, &w, false).0;
            model.params.get_mut(&name).unwrap().data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let analytic = grads.get(&name).unwrap().data().to_vec();
        out.push((name, rel_error(&analytic, &numeric)));
    }
    out
}
