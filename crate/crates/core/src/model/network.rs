use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cohort::TimeframeTensor;
use crate::error::{Error, Result};
use crate::model::batch::Batch;
use crate::model::config::{EmbedderKind, ModelConfig};
use crate::model::layers::{encoder_layer, encoder_layer_shapes, linear};
use crate::model::pe::positional_encoding;
use crate::numcore::rng::seeded;
use crate::numcore::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    /// `U(±1/√fan_in)`.
    FanIn(usize),
    Normal(f64),
}

/// Graph nodes of one timeframe: the virtual node, every numerical feature, every code.
fn gct_nodes(cfg: &ModelConfig) -> usize {
    1 + cfg.k + cfg.m
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, l) = (cfg.d_model, cfg.l());
    let mut v: Vec<(String, Vec<usize>, Init)> =
        vec![("cls".into(), vec![d], Init::Normal(0.02)), ("mask_embedding".into(), vec![d], Init::Normal(0.02))];
    let layer = |v: &mut Vec<(String, Vec<usize>, Init)>, prefix: String| {
        for (name, shape) in encoder_layer_shapes(&prefix, d, cfg.d_ff) {
            let init = if name.ends_with(".gain") {
                Init::Ones
            } else if shape.len() == 1 {
                Init::Zeros
            } else {
                Init::FanIn(shape[0])
            };
            v.push((name, shape, init));
        }
    };
    match cfg.embedder {
        EmbedderKind::Linear => {
            v.push(("embed.weight".into(), vec![l, d], Init::FanIn(l)));
            v.push(("embed.bias".into(), vec![d], Init::Zeros));
        }
        EmbedderKind::Gct => {
            v.push(("gct.feature_embedding".into(), vec![l, d], Init::FanIn(d)));
            v.push(("gct.value_weight".into(), vec![cfg.k, d], Init::FanIn(1)));
            v.push(("gct.value_bias".into(), vec![cfg.k, d], Init::Zeros));
            v.push(("gct.virtual".into(), vec![d], Init::FanIn(d)));
            for i in 0..cfg.gct_layers {
                layer(&mut v, format!("gct.layer{i}"));
            }
            v.push(("gct.out.weight".into(), vec![d, d], Init::FanIn(d)));
            v.push(("gct.out.bias".into(), vec![d], Init::Zeros));
        }
    }
    for i in 0..cfg.n_layers {
        layer(&mut v, format!("encoder.layer{i}"));
    }
    v.extend([
        ("head.w1".into(), vec![d, d], Init::FanIn(d)),
        ("head.b1".into(), vec![d], Init::Zeros),
        ("head.w2".into(), vec![d, 1], Init::FanIn(d)),
        ("head.b2".into(), vec![1], Init::Zeros),
        ("recon.weight".into(), vec![d, l], Init::FanIn(d)),
        ("recon.bias".into(), vec![l], Init::Zeros),
    ]);
    v
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[B]` pre-sigmoid scores.
    pub logits: Var,
    /// Encoder output `[B, p_max + 1, d_model]`, CLS first.
    pub hidden: Var,
    /// Sum over consecutive GCT layer pairs of the mean attention KL, unweighted.
    pub gct_kl: Option<Var>,
    /// Per GCT layer, `[R·heads, nodes, nodes]` over the embedded timeframes.
    pub gct_attention: Vec<Var>,
    /// Per encoder layer, `[B·heads, p_max + 1, p_max + 1]`.
    pub encoder_attention: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatchetModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> RatchetModel<T> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::FanIn(f) => {
                    let a = 1.0 / (f.max(1) as f64).sqrt();
                    (0..n).map(|_| T::of(rng.random_range(-a..a))).collect()
                }
                Init::Normal(sd) => {
                    let dist = Normal::new(0.0, sd).expect("valid std");
                    (0..n).map(|_| T::of(dist.sample(rng))).collect()
                }
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(RatchetModel { config, params })
    }

    /// Checks that `params` has exactly the names and shapes `config` implies.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Shape(format!("checkpoint has {} tensors, config implies {}", params.len(), specs.len())));
        }
        for (name, shape, _) in &specs {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => return Err(Error::Shape(format!("{name}: checkpoint {:?}, config {shape:?}", t.shape()))),
                None => return Err(Error::Shape(format!("checkpoint lacks {name}"))),
            }
        }
        Ok(RatchetModel { config, params })
    }

    /// Writes `model.config`, `model.manifest` and `model.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("model.config");
        fs::write(&cfg, self.config.to_text()).map_err(|e| Error::io(&cfg, e))?;
        self.params.save(&dir.join("model.manifest"), &dir.join("model.bin"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = dir.join("model.config");
        let text = fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let params = ParamStore::load(&dir.join("model.manifest"), &dir.join("model.bin"))?;
        Self::from_parts(ModelConfig::from_text(&text)?, params)
    }

    /// Runs embedder, encoder and classifier on `x [B·P, l]` laid out as `batch`.
    ///
    /// Rows in `masked` (flat indices of real timeframes) enter the encoder as the
    /// learned mask embedding instead of their content.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x: Var,
        batch: &Batch<T>,
        masked: &[usize],
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let (b, pm, d, l) = (batch.b, batch.p, cfg.d_model, cfg.l());
        if pm != cfg.p_max || batch.l() != l || batch.k != cfg.k {
            return Err(Error::Shape(format!(
                "batch has p={pm}, k={}, m={}; model expects p={}, k={}, m={}",
                batch.k, batch.m, cfg.p_max, cfg.k, cfg.m
            )));
        }
        if tape.shape(x) != [b * pm, l] {
            return Err(Error::Shape(format!("input {:?} for a batch of {b}x{pm}x{l}", tape.shape(x))));
        }
        let mut is_masked = vec![false; b * pm];
        for &i in masked {
            if i >= b * pm || !batch.pad_mask[i] {
                return Err(Error::Contract(format!("masked position {i} is not a real timeframe")));
            }
            is_masked[i] = true;
        }
        let s = pm + 1;
        let seq_pos = |i: usize| (i / pm) * s + 1 + i % pm;
        let embed_rows: Vec<usize> = (0..b * pm).filter(|&i| batch.pad_mask[i] && !is_masked[i]).collect();

        let mut parts = Vec::new();
        let mut gct_attention = Vec::new();
        let mut gct_kl = None;
        if !embed_rows.is_empty() {
            let xr = tape.gather_rows(x, &embed_rows)?;
            let e = match cfg.embedder {
                EmbedderKind::Linear => linear(tape, p, "embed.weight", "embed.bias", xr)?,
                EmbedderKind::Gct => {
                    let (e, attn, kl) = self.gct_embed(tape, p, xr, training, rng)?;
                    gct_attention = attn;
                    gct_kl = kl;
                    e
                }
            };
            let pos: Vec<usize> = embed_rows.iter().map(|&i| seq_pos(i)).collect();
            parts.push(tape.scatter_rows(e, &pos, b * s)?);
        }
        if !masked.is_empty() {
            let me = tape.reshape(p.get("mask_embedding"), &[1, d])?;
            let me = tape.gather_rows(me, &vec![0; masked.len()])?;
            let pos: Vec<usize> = masked.iter().map(|&i| seq_pos(i)).collect();
            parts.push(tape.scatter_rows(me, &pos, b * s)?);
        }
        let cls = tape.reshape(p.get("cls"), &[1, d])?;
        let cls = tape.gather_rows(cls, &vec![0; b])?;
        let cls_pos: Vec<usize> = (0..b).map(|i| i * s).collect();
        parts.push(tape.scatter_rows(cls, &cls_pos, b * s)?);

        let pe: Tensor<T> = positional_encoding(pm, d)?;
        let mut pe_rows = vec![T::zero(); b * s * d];
        let mut gate = vec![T::zero(); b * s];
        for i in 0..b {
            gate[i * s] = T::one();
        }
        for i in (0..b * pm).filter(|&i| batch.pad_mask[i]) {
            let (dst, j) = (seq_pos(i), i % pm);
            pe_rows[dst * d..(dst + 1) * d].copy_from_slice(&pe.data()[j * d..(j + 1) * d]);
            gate[dst] = T::one();
        }
        let mut h = tape.constant(Tensor::new(vec![b * s, d], pe_rows)?);
        for part in parts {
            h = tape.add(h, part)?;
        }
        let h = tape.reshape(h, &[b, s, d])?;
        let mut h = tape.dropout(h, cfg.dropout, training, rng)?;
        let gate = tape.constant(Tensor::new(vec![b, s], gate)?);

        let mut encoder_attention = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let (next, attn) =
                encoder_layer(tape, p, &format!("encoder.layer{i}"), h, gate, cfg.n_heads, cfg.dropout, training, rng)?;
            h = next;
            encoder_attention.push(attn);
        }

        let c = tape.slice(h, 1, 0, 1)?;
        let c = tape.reshape(c, &[b, d])?;
        let z = linear(tape, p, "head.w1", "head.b1", c)?;
        let z = tape.gelu(z);
        let z = tape.dropout(z, cfg.dropout, training, rng)?;
        let z = linear(tape, p, "head.w2", "head.b2", z)?;
        let logits = tape.reshape(z, &[b])?;
        Ok(Forward { logits, hidden: h, gct_kl, gct_attention, encoder_attention })
    }

    /// [`forward`](Self::forward) on the batch's own values, held constant.
    pub fn forward_batch(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        batch: &Batch<T>,
        masked: &[usize],
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Forward> {
        let x = tape.constant(batch.values.clone());
        self.forward(tape, p, x, batch, masked, training, rng)
    }

    /// Feature-graph embedding of `xr [R, l]`: returns `[R, d_model]`, the per-layer
    /// attention and the summed consecutive-layer KL.
    fn gct_embed(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        xr: Var,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Var, Vec<Var>, Option<Var>)> {
        let cfg = &self.config;
        let (k, m, d) = (cfg.k, cfg.m, cfg.d_model);
        let r = tape.shape(xr)[0];
        let n = gct_nodes(cfg);

        let zeros_virtual = tape.constant(Tensor::zeros(&[r, 1, d]));
        let mut nodes = vec![tape.add(zeros_virtual, p.get("gct.virtual"))?];
        let fe = p.get("gct.feature_embedding");
        if k > 0 {
            let z = tape.slice(xr, 1, 0, k)?;
            let z = tape.reshape(z, &[r, k, 1])?;
            let scaled = tape.mul(z, p.get("gct.value_weight"))?;
            let fe_num = tape.slice(fe, 0, 0, k)?;
            let offset = tape.add(fe_num, p.get("gct.value_bias"))?;
            nodes.push(tape.add(scaled, offset)?);
        }
        let gate = if m > 0 {
            let fe_code = tape.slice(fe, 0, k, k + m)?;
            let zeros_codes = tape.constant(Tensor::zeros(&[r, m, d]));
            nodes.push(tape.add(zeros_codes, fe_code)?);
            let ones = tape.constant(Tensor::full(&[r, 1 + k], T::one()));
            let active = tape.slice(xr, 1, k, k + m)?;
            tape.concat(&[ones, active], 1)?
        } else {
            tape.constant(Tensor::full(&[r, n], T::one()))
        };
        let mut h = tape.concat(&nodes, 1)?;

        // KL rows: one per (timeframe, head, query node); only active query nodes count.
        let gv = tape.value(gate).data().to_vec();
        let heads = cfg.n_heads;
        let row_weight: Vec<T> = (0..r * heads * n)
            .map(|row| {
                let (tf, node) = (row / (heads * n), row % n);
                if gv[tf * n + node] > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();

        let mut attention = Vec::with_capacity(cfg.gct_layers);
        let mut kl: Option<Var> = None;
        for i in 0..cfg.gct_layers {
            let (next, attn) = encoder_layer(tape, p, &format!("gct.layer{i}"), h, gate, heads, cfg.dropout, training, rng)?;
            if let Some(&prev) = attention.last() {
                let term = tape.kl_rows(attn, prev, &row_weight)?;
                kl = Some(match kl {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            attention.push(attn);
            h = next;
        }
        let v = tape.slice(h, 1, 0, 1)?;
        let v = tape.reshape(v, &[r, d])?;
        let out = linear(tape, p, "gct.out.weight", "gct.out.bias", v)?;
        Ok((out, attention, kl))
    }

    /// Per-timeframe reconstruction `[B·P, l]` from the encoder output: numerical
    /// columns are regression outputs, categorical columns logits.
    pub fn reconstruct(&self, tape: &mut Tape<T>, p: &BoundParams, fwd: &Forward) -> Result<Var> {
        let shape = tape.shape(fwd.hidden).to_vec();
        let (b, s) = (shape[0], shape[1]);
        let rows = tape.slice(fwd.hidden, 1, 1, s)?;
        let out = linear(tape, p, "recon.weight", "recon.bias", rows)?;
        tape.reshape(out, &[b * (s - 1), self.config.l()])
    }

    /// Event probabilities, evaluated in chunks of `batch_size` without dropout.
    pub fn predict(&self, stays: &[TimeframeTensor], batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(stays.len());
        let mut rng = seeded(0);
        for chunk in stays.chunks(batch_size.max(1)) {
            let batch = Batch::from_slice(chunk)?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let fwd = self.forward_batch(&mut tape, &p, &batch, &[], false, &mut rng)?;
            let prob = tape.sigmoid(fwd.logits);
            tape.check_finite(prob, "prediction")?;
            out.extend(tape.value(prob).data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }
}
