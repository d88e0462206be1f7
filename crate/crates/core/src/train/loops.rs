//! Pretraining and fine-tuning loops.
//!
//! Every random draw comes from a generator derived from `(seed, stream, step)`
//! or `(seed, stream, epoch)`, so a run stopped after any step and resumed from
//! its saved [`TrainState`] continues bit-identically.

use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::{index, SliceRandom};

use crate::cohort::{TimeframeTensor, WeightedSampler};
use crate::error::{Error, Result};
use crate::eval::auc_roc;
use crate::model::{Batch, RatchetModel};
use crate::numcore::rng::{derive, Prng, Stream};
use crate::numcore::{ParamStore, Tape, Tensor};
use crate::scalar::Scalar;
use crate::train::child::ChildMask;
use crate::train::loss::{focal_batch_loss, masked_pretrain_loss};
use crate::train::optim::{adamw_step, warmup_schedule, AdamState, AdamW};
use crate::train::plan::{AlphaMode, SamplerKind, Stage, TrainPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Best<T: Scalar> {
    pub epoch: usize,
    pub val_auc: f64,
    pub params: ParamStore<T>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Scalar> {
    pub model: RatchetModel<T>,
    pub opt: AdamState<T>,
    /// Next step to run.
    pub step: usize,
    pub losses: Vec<LossRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<Best<T>>,
    pub mask: Option<ChildMask>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: RatchetModel<T>) -> Self {
        let opt = AdamState::new(&model.params);
        TrainState { model, opt, step: 0, losses: Vec::new(), epochs: Vec::new(), best: None, mask: None }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        self.opt.m.save(&dir.join("adam_m.manifest"), &dir.join("adam_m.bin"))?;
        self.opt.v.save(&dir.join("adam_v.manifest"), &dir.join("adam_v.bin"))?;
        let mut meta = format!("step {}\nadam_t {}\n", self.step, self.opt.t);
        if let Some(b) = &self.best {
            meta.push_str(&format!("best {} {}\n", b.epoch, b.val_auc));
            b.params.save(&dir.join("best.manifest"), &dir.join("best.bin"))?;
        }
        for e in &self.epochs {
            meta.push_str(&format!("epoch {} {} {}\n", e.epoch, e.mean_loss, e.val_auc.map_or("-".into(), |a| a.to_string())));
        }
        for l in &self.losses {
            meta.push_str(&format!("loss {} {} {} {}\n", l.epoch, l.step, l.loss, l.lr));
        }
        if let Some(m) = &self.mask {
            m.to_store().save(&dir.join("child_mask.manifest"), &dir.join("child_mask.bin"))?;
        }
        let path = dir.join("train.state");
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = RatchetModel::load(dir)?;
        let m = ParamStore::load(&dir.join("adam_m.manifest"), &dir.join("adam_m.bin"))?;
        let v = ParamStore::load(&dir.join("adam_v.manifest"), &dir.join("adam_v.bin"))?;
        let path = dir.join("train.state");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut state = TrainState::new(model);
        state.opt = AdamState { m, v, t: 0 };
        for (i, line) in text.lines().enumerate() {
            let bad = || Error::Parse { line: i + 1, message: format!("bad training state entry `{line}`") };
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                ["step", s] => state.step = s.parse().map_err(|_| bad())?,
                ["adam_t", t] => state.opt.t = t.parse().map_err(|_| bad())?,
                ["best", e, a] => {
                    let params = ParamStore::load(&dir.join("best.manifest"), &dir.join("best.bin"))?;
                    state.best =
                        Some(Best { epoch: e.parse().map_err(|_| bad())?, val_auc: a.parse().map_err(|_| bad())?, params });
                }
                ["epoch", e, l, a] => state.epochs.push(EpochRecord {
                    epoch: e.parse().map_err(|_| bad())?,
                    mean_loss: l.parse().map_err(|_| bad())?,
                    val_auc: if a == "-" { None } else { Some(a.parse().map_err(|_| bad())?) },
                }),
                ["loss", e, s, l, r] => state.losses.push(LossRecord {
                    epoch: e.parse().map_err(|_| bad())?,
                    step: s.parse().map_err(|_| bad())?,
                    loss: l.parse().map_err(|_| bad())?,
                    lr: r.parse().map_err(|_| bad())?,
                }),
                [] => {}
                _ => return Err(bad()),
            }
        }
        if dir.join("child_mask.manifest").exists() {
            let s = ParamStore::load(&dir.join("child_mask.manifest"), &dir.join("child_mask.bin"))?;
            state.mask = Some(ChildMask::from_store(&s));
        }
        Ok(state)
    }
}

/// Summary of a finished fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub mask_density: Option<f64>,
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Sample order of one epoch: weighted draws with replacement, or a permutation.
fn epoch_order(plan: &TrainPlan, sampler: Option<&WeightedSampler>, n: usize, epoch: usize) -> Vec<usize> {
    let mut rng = derive(plan.seed, Stream::Sampler, epoch as u64);
    match (plan.sampler, sampler) {
        (SamplerKind::Weighted, Some(s)) => s.draw(n, &mut rng),
        _ => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        }
    }
}

/// `round(fraction · n_real)` (at least one) random real rows of each stay.
pub fn sample_mask_positions(batch_pad: &[bool], p: usize, fraction: f64, rng: &mut Prng) -> Vec<usize> {
    let mut out = Vec::new();
    for (b, rows) in batch_pad.chunks(p).enumerate() {
        let real: Vec<usize> = (0..p).filter(|&j| rows[j]).collect();
        if real.is_empty() {
            continue;
        }
        let count = ((fraction * real.len() as f64).round() as usize).clamp(1, real.len());
        let mut chosen: Vec<usize> = index::sample(rng, real.len(), count).into_iter().map(|i| b * p + real[i]).collect();
        chosen.sort_unstable();
        out.extend(chosen);
    }
    out
}

fn alpha_pos(plan: &TrainPlan, labels: &[u8]) -> f64 {
    match plan.focal_alpha {
        AlphaMode::Fixed(a) => a,
        AlphaMode::InverseFrequency => {
            let n1 = labels.iter().filter(|&&y| y == 1).count();
            (labels.len() - n1) as f64 / labels.len() as f64
        }
    }
}

/// Loss and parameter gradients of one minibatch.
fn batch_grads<T: Scalar>(
    model: &RatchetModel<T>,
    stays: &[&TimeframeTensor],
    plan: &TrainPlan,
    alpha: f64,
    training: bool,
    step_key: u64,
) -> Result<(f64, ParamStore<T>)> {
    let batch = Batch::new(stays)?;
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let mut drop_rng = derive(plan.seed, Stream::Dropout, step_key);
    let mut loss = match plan.stage {
        Stage::Pretrain => {
            let mut mask_rng = derive(plan.seed, Stream::Masking, step_key);
            let masked = sample_mask_positions(&batch.pad_mask, batch.p, plan.mask_fraction, &mut mask_rng);
            let fwd = model.forward_batch(&mut tape, &p, &batch, &masked, training, &mut drop_rng)?;
            let recon = model.reconstruct(&mut tape, &p, &fwd)?;
            let l = masked_pretrain_loss(&mut tape, recon, &batch, &masked)?;
            (l, fwd.gct_kl)
        }
        Stage::Finetune => {
            let fwd = model.forward_batch(&mut tape, &p, &batch, &[], training, &mut drop_rng)?;
            let l = focal_batch_loss(&mut tape, fwd.logits, &batch.labels, plan.focal_gamma, alpha)?;
            (l, fwd.gct_kl)
        }
    };
    let w = model.config.gct_kl_weight;
    if let (Some(kl), true) = (loss.1, w > 0.0) {
        let kl = tape.scale(kl, T::of(w));
        loss.0 = tape.add(loss.0, kl)?;
    }
    tape.check_finite(loss.0, "training loss")?;
    let value = tape.value(loss.0).item().as_f64();
    tape.backward(loss.0)?;
    Ok((value, model.params.grads_from(&tape, &p)))
}

/// Child-tuning mask from the mean squared task-loss gradient over
/// `fisher_batches` minibatches, dropout off.
pub fn fisher_mask<T: Scalar>(model: &RatchetModel<T>, train: &[TimeframeTensor], plan: &TrainPlan) -> Result<ChildMask> {
    let ct = plan.child_tuning;
    if ct.fisher_batches == 0 {
        return Err(Error::Config("fisher_batches must be at least 1".into()));
    }
    let labels: Vec<u8> = train.iter().map(|t| t.label).collect();
    let sampler = WeightedSampler::balanced(&labels)?;
    let alpha = alpha_pos(plan, &labels);
    let mut fisher = ParamStore::<f64>::new();
    for (name, t) in model.params.iter() {
        fisher.insert(name, Tensor::zeros(t.shape()));
    }
    let scale = 1.0 / ct.fisher_batches as f64;
    let mut fplan = plan.clone();
    fplan.stage = Stage::Finetune;
    for b in 0..ct.fisher_batches {
        let mut rng = derive(plan.seed, Stream::Fisher, b as u64);
        let idx = match plan.sampler {
            SamplerKind::Weighted => sampler.draw(plan.batch_size, &mut rng),
            SamplerKind::Uniform => index::sample(&mut rng, train.len(), plan.batch_size.min(train.len())).into_vec(),
        };
        let stays: Vec<&TimeframeTensor> = idx.iter().map(|&i| &train[i]).collect();
        let (_, g) = batch_grads(model, &stays, &fplan, alpha, false, u64::MAX - b as u64)?;
        for (name, f) in fisher.iter_mut() {
            let gd = g.get(name).expect("same names").data();
            for (fv, &gv) in f.data_mut().iter_mut().zip(gd) {
                *fv += scale * gv.as_f64() * gv.as_f64();
            }
        }
    }
    ChildMask::top_fraction(&fisher, ct.keep_fraction)
}

/// Runs steps `state.step..` of `plan`, stopping early after `stop_after` total
/// steps when given. Fine-tuning evaluates `val` after each epoch and keeps the
/// best-AUC parameters.
fn run<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[TimeframeTensor],
    val: &[TimeframeTensor],
    plan: &TrainPlan,
    stop_after: Option<usize>,
) -> Result<()> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("no training stays".into()));
    }
    state.model.config.dropout = plan.dropout;
    let labels: Vec<u8> = train.iter().map(|t| t.label).collect();
    let sampler = match (plan.stage, plan.sampler) {
        (Stage::Finetune, _) | (_, SamplerKind::Weighted) => Some(WeightedSampler::balanced(&labels)?),
        _ => None,
    };
    let alpha = alpha_pos(plan, &labels);
    let spe = steps_per_epoch(train.len(), plan.batch_size);
    let total = plan.epochs * spe;
    let end = stop_after.map_or(total, |s| s.min(total));
    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();
    let mut epoch_loss = 0.0;
    while state.step < end {
        let s = state.step;
        let (epoch, pos) = (s / spe, s % spe);
        if order_epoch != epoch {
            order = epoch_order(plan, sampler.as_ref(), train.len(), epoch);
            order_epoch = epoch;
            epoch_loss = state.losses.iter().filter(|l| l.epoch == epoch).map(|l| l.loss).sum();
        }
        let idx = &order[pos * plan.batch_size..((pos + 1) * plan.batch_size).min(order.len())];
        let stays: Vec<&TimeframeTensor> = idx.iter().map(|&i| &train[i]).collect();
        let lr = warmup_schedule(s, plan.warmup_steps, total, plan.base_lr)?;
        let (loss, mut grads) = batch_grads(&state.model, &stays, plan, alpha, true, s as u64)?;
        if let Some(mask) = &state.mask {
            mask.apply(&mut grads)?;
        }
        adamw_step(&mut state.model.params, &grads, &mut state.opt, lr, plan.weight_decay, AdamW::default())?;
        state.losses.push(LossRecord { epoch, step: s, loss, lr });
        epoch_loss += loss;
        state.step += 1;
        if pos + 1 == spe {
            let mean_loss = epoch_loss / spe as f64;
            let val_auc = if plan.stage == Stage::Finetune && !val.is_empty() {
                let scores = state.model.predict(val, 64)?;
                let y: Vec<u8> = val.iter().map(|t| t.label).collect();
                Some(auc_roc(&scores, &y)?)
            } else {
                None
            };
            info!("epoch {epoch}: loss {mean_loss:.5}{}", val_auc.map_or(String::new(), |a| format!(", val AUC {a:.4}")));
            if let Some(a) = val_auc {
                if state.best.as_ref().is_none_or(|b| a > b.val_auc) {
                    state.best = Some(Best { epoch, val_auc: a, params: state.model.params.clone() });
                }
            }
            state.epochs.push(EpochRecord { epoch, mean_loss, val_auc });
        }
        debug!("step {s}: loss {loss:.6}, lr {lr:.3e}");
    }
    Ok(())
}

/// Masked-timeframe pretraining. Stops after `stop_after` total steps when given.
pub fn pretrain<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[TimeframeTensor],
    plan: &TrainPlan,
    stop_after: Option<usize>,
) -> Result<()> {
    if plan.stage != Stage::Pretrain {
        return Err(Error::Config("pretrain called with a fine-tuning plan".into()));
    }
    run(state, train, &[], plan, stop_after)
}

/// Supervised fine-tuning with optional child tuning, focal loss and per-epoch
/// validation; on completion the model holds the best-validation-AUC parameters.
pub fn finetune<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[TimeframeTensor],
    val: &[TimeframeTensor],
    plan: &TrainPlan,
    stop_after: Option<usize>,
) -> Result<FinetuneReport> {
    if plan.stage != Stage::Finetune {
        return Err(Error::Config("finetune called with a pretraining plan".into()));
    }
    let n1 = train.iter().filter(|t| t.label == 1).count();
    if n1 == 0 || n1 == train.len() {
        return Err(Error::DegenerateCohort(format!("fine-tuning needs both classes, got {n1} positives of {}", train.len())));
    }
    plan.validate()?;
    if plan.child_tuning.enabled && state.mask.is_none() && state.step == 0 {
        state.mask = Some(fisher_mask(&state.model, train, plan)?);
    }
    run(state, train, val, plan, stop_after)?;
    let total = plan.epochs * steps_per_epoch(train.len(), plan.batch_size);
    if state.step == total {
        if let Some(b) = &state.best {
            state.model.params = b.params.clone();
        }
    }
    Ok(FinetuneReport {
        best_epoch: state.best.as_ref().map_or(plan.epochs - 1, |b| b.epoch),
        best_val_auc: state.best.as_ref().map(|b| b.val_auc),
        mask_density: state.mask.as_ref().map(ChildMask::density),
    })
}

/// Appends loss records to a CSV with header `stage,epoch,step,loss,lr`.
pub fn write_loss_curve(path: &Path, stage: Stage, records: &[LossRecord]) -> Result<()> {
    let exists = path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(["stage", "epoch", "step", "loss", "lr"])?;
    }
    let stage = match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    };
    for r in records {
        w.write_record([stage.to_string(), r.epoch.to_string(), r.step.to_string(), r.loss.to_string(), r.lr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends per-epoch records to a CSV with header `epoch,mean_loss,val_auc`.
pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let exists = path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(["epoch", "mean_loss", "val_auc"])?;
    }
    for r in records {
        w.write_record([r.epoch.to_string(), r.mean_loss.to_string(), r.val_auc.map_or(String::new(), |a| a.to_string())])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

