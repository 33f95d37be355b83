use tensorlab::{kernels, Graph, Real, Var};

use super::attention::{linear, merge_heads, split_heads};
use super::{attention, rescale_factors, MrauBranch, Network};
use crate::datasim::Batch;
use crate::params::Bound;
use crate::{Modality, Result};

/// Which copy of the batch features the encoders read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Masked,
    Complete,
}

/// Graph handles of one recognition pass. Sequence tensors are flattened to
/// `[B·T_m, d]` with padded rows held at zero.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub pad_lens: [usize; 3],
    pub encoded: [Var; 3],
    pub reinforced: [Var; 3],
    /// Attention probabilities `[B·H, T_m, ΣT]` per layer and query modality.
    pub attention: Vec<[Var; 3]>,
    pub pool_weights: [Var; 3],
    pub pooled: [Var; 3],
    /// `[B, 3d]` concatenation of the pooled vectors.
    pub fused: Var,
    pub logits: Var,
}

pub(crate) fn row_mask<T: Real>(valid: &[bool], width: usize) -> Vec<T> {
    valid
        .iter()
        .flat_map(|&ok| std::iter::repeat_n(if ok { T::one() } else { T::zero() }, width))
        .collect()
}

/// Temporal convolution plus sinusoidal positions for modality `m`, `[B·T_m, d]`.
pub fn unimodal_encode<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    p: &Bound,
    batch: &Batch,
    view: View,
    m: Modality,
) -> Result<Var> {
    let i = m.index();
    let mb = &batch.modalities[i];
    let d = net.cfg.d;
    let raw = match view {
        View::Masked => &mb.masked,
        View::Complete => &mb.complete,
    };
    let x = g.constant([batch.size, mb.pad_len, mb.dim], raw.iter().map(|&v| T::lit(v as f64)).collect())?;
    let y = g.conv1d(x, p.var(net.mct.conv_w[i]), p.var(net.mct.conv_b[i]))?;
    let pe = kernels::sinusoidal_positions::<T>(mb.pad_len, d);
    let tiled: Vec<T> = pe.iter().copied().cycle().take(batch.size * mb.pad_len * d).collect();
    let y = g.add_const(y, &tiled)?;
    let y = g.reshape(y, [batch.size * mb.pad_len, d])?;
    Ok(g.mul_const(y, row_mask(&mb.valid(), d))?)
}

/// One re-scaled hyper-modality attention layer applied to all three
/// modalities. Returns the new sequences and the attention probabilities.
pub fn mrau_forward<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    p: &Bound,
    layer: &[MrauBranch; 3],
    h: [Var; 3],
    batch: &Batch,
) -> Result<([Var; 3], [Var; 3])> {
    let cfg = &net.cfg;
    let (bsz, heads, dk) = (batch.size, cfg.heads, cfg.d_k);
    let pads = batch.modalities.each_ref().map(|mb| mb.pad_len);
    let mut factors = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let (gb, ge) = rescale_factors(batch.lengths(b), cfg.max_lens)?;
        factors.push(gb.map(|x| {
            let mut f = 1.0;
            if cfg.gamma_b {
                f *= x;
            }
            if cfg.gamma_e {
                f *= ge;
            }
            f
        }));
    }
    let mut qs = Vec::with_capacity(3);
    let mut ks = Vec::with_capacity(3);
    let mut vs = Vec::with_capacity(3);
    for m in Modality::ALL {
        let i = m.index();
        let a = &layer[i].attn;
        let q = linear(g, p, h[i], a.wq, a.bq)?;
        qs.push(split_heads(g, q, bsz, pads[i], heads)?);
        let k = linear(g, p, h[i], a.wk, a.bk)?;
        let k = split_heads(g, k, bsz, pads[i], heads)?;
        let per_sample = heads * pads[i] * dk;
        let scale: Vec<T> = (0..bsz * per_sample).map(|j| T::lit(factors[j / per_sample][i])).collect();
        ks.push(g.mul_const(k, scale)?);
        let v = linear(g, p, h[i], a.wv, a.bv)?;
        vs.push(split_heads(g, v, bsz, pads[i], heads)?);
    }
    let kc = g.concat(&ks, 1)?;
    let vc = g.concat(&vs, 1)?;
    let valid = batch.modalities.each_ref().map(|mb| mb.valid());
    let mut key_valid = Vec::with_capacity(bsz * pads.iter().sum::<usize>());
    for b in 0..bsz {
        for i in 0..3 {
            key_valid.extend_from_slice(&valid[i][b * pads[i]..(b + 1) * pads[i]]);
        }
    }
    let eps = T::lit(cfg.ln_eps);
    let mut out = Vec::with_capacity(3);
    let mut probs = Vec::with_capacity(3);
    for m in Modality::ALL {
        let i = m.index();
        let br = &layer[i];
        let (ctx, pr) = attention(g, qs[i], kc, vc, &key_valid, heads)?;
        probs.push(pr);
        let ctx = merge_heads(g, ctx, bsz, heads)?;
        let o = linear(g, p, ctx, br.attn.wo, br.attn.bo)?;
        let x = g.add(h[i], o)?;
        let x = g.layer_norm(x, p.var(br.ln1_gain), p.var(br.ln1_bias), eps)?;
        let f = linear(g, p, x, br.ffn1_w, br.ffn1_b)?;
        let f = g.relu(f);
        let f = linear(g, p, f, br.ffn2_w, br.ffn2_b)?;
        let x = g.add(x, f)?;
        let x = g.layer_norm(x, p.var(br.ln2_gain), p.var(br.ln2_bias), eps)?;
        out.push(g.mul_const(x, row_mask(&valid[i], cfg.d))?);
    }
    Ok((out.try_into().unwrap(), probs.try_into().unwrap()))
}

/// Learned-query attention pooling of `e` (`[B·T, d]`) to `[B, d]`, also
/// returning the weights `[B, T]`. Padded steps get zero weight.
pub fn attention_pool<T: Real>(g: &mut Graph<T>, e: Var, query: Var, batch: usize, valid: &[bool]) -> Result<(Var, Var)> {
    let d = g.shape(e)[1];
    let t = valid.len() / batch;
    let q = g.reshape(query, [d, 1])?;
    let s = g.matmul(e, q)?;
    let s = g.reshape(s, [batch, t])?;
    let s = g.scale(s, T::lit(1.0 / (d as f64).sqrt()));
    let bias: Vec<T> = valid.iter().map(|&ok| if ok { T::zero() } else { T::neg_infinity() }).collect();
    let s = g.add_const(s, &bias)?;
    let w = g.softmax(s)?;
    let w3 = g.reshape(w, [batch, 1, t])?;
    let e3 = g.reshape(e, [batch, t, d])?;
    let pooled = g.bmm(w3, e3, false)?;
    Ok((g.reshape(pooled, [batch, d])?, w))
}

/// Classifier head over the fused `[B, 3d]` representation.
pub fn classify_logits<T: Real>(g: &mut Graph<T>, net: &Network<T>, p: &Bound, fused: Var) -> Result<Var> {
    let mut x = fused;
    let n = net.mct.classifier.len();
    for (j, &(w, b)) in net.mct.classifier.iter().enumerate() {
        x = linear(g, p, x, w, b)?;
        if j + 1 < n {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Full recognition pass over `batch`.
pub fn mct_forward<T: Real>(g: &mut Graph<T>, net: &Network<T>, p: &Bound, batch: &Batch, view: View) -> Result<ForwardTrace> {
    let encoded = [
        unimodal_encode(g, net, p, batch, view, Modality::Audio)?,
        unimodal_encode(g, net, p, batch, view, Modality::Vision)?,
        unimodal_encode(g, net, p, batch, view, Modality::Language)?,
    ];
    let mut h = encoded;
    let mut attn = Vec::with_capacity(net.mct.layers.len());
    for layer in &net.mct.layers {
        let (next, probs) = mrau_forward(g, net, p, layer, h, batch)?;
        h = next;
        attn.push(probs);
    }
    let mut pooled = Vec::with_capacity(3);
    let mut weights = Vec::with_capacity(3);
    for m in Modality::ALL {
        let i = m.index();
        let (v, w) = attention_pool(g, h[i], p.var(net.mct.pool[i]), batch.size, &batch.modalities[i].valid())?;
        pooled.push(v);
        weights.push(w);
    }
    let fused = g.concat(&pooled, 1)?;
    let logits = classify_logits(g, net, p, fused)?;
    Ok(ForwardTrace {
        batch: batch.size,
        pad_lens: batch.modalities.each_ref().map(|mb| mb.pad_len),
        encoded,
        reinforced: h,
        attention: attn,
        pool_weights: weights.try_into().unwrap(),
        pooled: pooled.try_into().unwrap(),
        fused,
        logits,
    })
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`,
/// with probabilities floored at `1e-12`.
pub fn ce_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(probs.len(), labels.len());
    let total: f64 = probs.iter().zip(labels).map(|(p, &y)| -p[y].max(1e-12).ln()).sum();
    total / labels.len().max(1) as f64
}

impl<T: Real> Network<T> {
    /// Class probabilities for every sample of `batch`.
    pub fn predict_proba(&self, batch: &Batch, view: View) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let trace = mct_forward(&mut g, self, &p, batch, view)?;
        let c = self.cfg.classes;
        let logits = g.value(trace.logits);
        let mut out = Vec::with_capacity(batch.size);
        for row in logits.chunks(c) {
            let p = kernels::softmax(row)?;
            out.push(p.iter().map(|v| v.as_f64()).collect());
        }
        Ok(out)
    }
}
