//! Building blocks shared by the feature-graph embedder and the temporal encoder.

use rand::Rng;

use crate::error::Result;
use crate::numcore::{BoundParams, Tape, Var};
use crate::scalar::Scalar;

pub(crate) fn linear<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, w: &str, b: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.get(w))?;
    tape.add(y, p.get(b))
}

/// Gated multi-head self-attention over `x [n, s, d]`; `gate [n, s]` weights each
/// key (0 removes it). Returns the projected output and the attention `[n·h, s, s]`.
pub(crate) fn self_attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    gate: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    let shape = tape.shape(x).to_vec();
    let (n, s, d) = (shape[0], shape[1], shape[2]);
    let dh = d / heads;
    let split = |tape: &mut Tape<T>, name: &str| -> Result<Var> {
        let y = linear(tape, p, &format!("{prefix}.w{name}"), &format!("{prefix}.b{name}"), x)?;
        let y = tape.reshape(y, &[n, s, heads, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.reshape(y, &[n * heads, s, dh])
    };
    let q = split(tape, "q")?;
    let k = split(tape, "k")?;
    let v = split(tape, "v")?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, T::one() / T::of(dh as f64).sqrt());
    let attn = tape.gated_softmax(scores, gate)?;
    let ctx = tape.batch_matmul(attn, v, false)?;
    let ctx = tape.reshape(ctx, &[n, heads, s, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, s, d])?;
    let out = linear(tape, p, &format!("{prefix}.wo"), &format!("{prefix}.bo"), ctx)?;
    Ok((out, attn))
}

/// Post-norm transformer layer: attention and feed-forward sublayers, each with
/// dropout, residual and layer norm.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    gate: Var,
    heads: usize,
    dropout: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<(Var, Var)> {
    let (a, attn) = self_attention(tape, p, &format!("{prefix}.attn"), x, gate, heads)?;
    let a = tape.dropout(a, dropout, training, rng)?;
    let h = tape.add(x, a)?;
    let h = tape.layer_norm(h, p.get(&format!("{prefix}.ln1.gain")), p.get(&format!("{prefix}.ln1.bias")), 1e-5)?;
    let f = linear(tape, p, &format!("{prefix}.ff.w1"), &format!("{prefix}.ff.b1"), h)?;
    let f = tape.gelu(f);
    let f = linear(tape, p, &format!("{prefix}.ff.w2"), &format!("{prefix}.ff.b2"), f)?;
    let f = tape.dropout(f, dropout, training, rng)?;
    let h2 = tape.add(h, f)?;
    let out = tape.layer_norm(h2, p.get(&format!("{prefix}.ln2.gain")), p.get(&format!("{prefix}.ln2.bias")), 1e-5)?;
    Ok((out, attn))
}

/// Names and shapes of one encoder layer's parameters.
pub(crate) fn encoder_layer_shapes(prefix: &str, d: usize, d_ff: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    for w in ["q", "k", "v", "o"] {
        v.push((format!("{prefix}.attn.w{w}"), vec![d, d]));
        v.push((format!("{prefix}.attn.b{w}"), vec![d]));
    }
    v.push((format!("{prefix}.ff.w1"), vec![d, d_ff]));
    v.push((format!("{prefix}.ff.b1"), vec![d_ff]));
    v.push((format!("{prefix}.ff.w2"), vec![d_ff, d]));
    v.push((format!("{prefix}.ff.b2"), vec![d]));
    for ln in ["ln1", "ln2"] {
        v.push((format!("{prefix}.{ln}.gain"), vec![d]));
        v.push((format!("{prefix}.{ln}.bias"), vec![d]));
    }
    v
}
