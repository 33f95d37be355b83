use rand_chacha::ChaCha8Rng;
use tensorlab::{Graph, Real, Var};

use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::Result;

/// Multi-head attention projections `W_Q, W_K, W_V, W_O` with biases.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionBlock {
    /// Queries come from width `d_q`, keys and values from width `d_kv`;
    /// the head space and output are both `d` wide.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_q: usize,
        d_kv: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut named = |suffix: &str, fan_in: usize| {
            let w = store.add(format!("{prefix}.w{suffix}"), &[fan_in, d], Init::Xavier { fan_in, fan_out: d }, rng);
            let b = store.add(format!("{prefix}.b{suffix}"), &[d], Init::Zeros, rng);
            (w, b)
        };
        let (wq, bq) = named("q", d_q);
        let (wk, bk) = named("k", d_kv);
        let (wv, bv) = named("v", d_kv);
        let (wo, bo) = named("o", d);
        Self { wq, bq, wk, bk, wv, bv, wo, bo }
    }
}

/// `x·W + b` over the rows of a 2-D `x`.
pub(crate) fn linear<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let y = g.matmul(x, p.var(w))?;
    Ok(g.add_bias(y, p.var(b))?)
}

/// `[B·T, H·d_k]` rows to `[B·H, T, d_k]`.
pub(crate) fn split_heads<T: Real>(g: &mut Graph<T>, x: Var, batch: usize, len: usize, heads: usize) -> Result<Var> {
    let width = g.shape(x)[1];
    let dk = width / heads;
    let x = g.reshape(x, [batch, len, heads, dk])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, [batch * heads, len, dk])?)
}

/// `[B·H, T, d_k]` back to `[B·T, H·d_k]`.
pub(crate) fn merge_heads<T: Real>(g: &mut Graph<T>, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let (len, dk) = (g.shape(x)[1], g.shape(x)[2]);
    let x = g.reshape(x, [batch, heads, len, dk])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, [batch * len, heads * dk])?)
}

/// Additive score offsets of shape `[B·H, T_q, S]`: zero for a valid key,
/// `-inf` for a padded one. `key_valid` is `B × S`.
pub fn key_padding_bias<T: Real>(key_valid: &[bool], batch: usize, heads: usize, tq: usize) -> Vec<T> {
    let s = key_valid.len() / batch;
    let mut out = Vec::with_capacity(batch * heads * tq * s);
    for b in 0..batch {
        let row: Vec<T> = key_valid[b * s..(b + 1) * s]
            .iter()
            .map(|&ok| if ok { T::zero() } else { T::neg_infinity() })
            .collect();
        for _ in 0..heads * tq {
            out.extend_from_slice(&row);
        }
    }
    out
}

/// Scaled dot-product attention over head-split tensors
/// (`q`: `[B·H, T_q, d_k]`, `k`/`v`: `[B·H, S, d_k]`). Returns the
/// context `[B·H, T_q, d_k]` and the probabilities `[B·H, T_q, S]`.
pub fn attention<T: Real>(g: &mut Graph<T>, q: Var, k: Var, v: Var, key_valid: &[bool], heads: usize) -> Result<(Var, Var)> {
    let (bh, tq, dk) = (g.shape(q)[0], g.shape(q)[1], g.shape(q)[2]);
    let batch = bh / heads;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, T::lit(1.0 / (dk as f64).sqrt()));
    let bias = key_padding_bias(key_valid, batch, heads, tq);
    let scores = g.add_const(scores, &bias)?;
    let probs = g.softmax(scores)?;
    let ctx = g.bmm(probs, v, false)?;
    Ok((ctx, probs))
}

/// Full multi-head attention: queries from `xq` (`[B·T_q, d_q]`), keys and
/// values from `xkv` (`[B·S, d_kv]`), output `[B·T_q, d]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn multi_head<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    block: &AttentionBlock,
    xq: Var,
    xkv: Var,
    batch: usize,
    key_valid: &[bool],
    heads: usize,
) -> Result<(Var, Var)> {
    let tq = g.shape(xq)[0] / batch;
    let s = key_valid.len() / batch;
    let q = linear(g, p, xq, block.wq, block.bq)?;
    let q = split_heads(g, q, batch, tq, heads)?;
    let k = linear(g, p, xkv, block.wk, block.bk)?;
    let k = split_heads(g, k, batch, s, heads)?;
    let v = linear(g, p, xkv, block.wv, block.bv)?;
    let v = split_heads(g, v, batch, s, heads)?;
    let (ctx, probs) = attention(g, q, k, v, key_valid, heads)?;
    let ctx = merge_heads(g, ctx, batch, heads)?;
    Ok((linear(g, p, ctx, block.wo, block.bo)?, probs))
}
