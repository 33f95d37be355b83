//! Hybrid feature reconstruction: per-modality decoders that imagine the
//! ablated steps from the reinforced features (local), and an alignment of
//! the pooled representations of the masked and complete views (global).

mod metrics;

pub use metrics::{cmd, cmd_value, cosine_distance, jsd, smooth_l1, smooth_l1_distance};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorlab::{Graph, Real, Var};

use crate::datasim::Batch;
use crate::mct::attention::{linear, multi_head};
use crate::mct::forward::row_mask;
use crate::mct::{linear_params, mct_forward, AttentionBlock, ForwardTrace, ModelConfig, Network, View};
use crate::params::{Bound, ParamId, ParamStore};
use crate::{Modality, Result};

/// Distance between the aligned masked-view and complete-view representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cmd,
    Cosine,
    Jsd,
    SmoothL1,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cmd" => Ok(Self::Cmd),
            "cosine" => Ok(Self::Cosine),
            "jsd" => Ok(Self::Jsd),
            "smooth_l1" => Ok(Self::SmoothL1),
            other => Err(format!("unknown metric {other:?} (expected cmd, cosine, jsd or smooth_l1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HfrConfig {
    pub metric: Metric,
    pub cmd_order: usize,
    /// Self-attention plus cross-attention blocks per decoder.
    pub decoder_blocks: usize,
}

impl Default for HfrConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Cmd,
            cmd_order: 5,
            decoder_blocks: 1,
        }
    }
}

impl HfrConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.cmd_order == 0 {
            errs.push("hfr.cmd_order must be ≥ 1".into());
        }
        if self.decoder_blocks == 0 {
            errs.push("hfr.decoder_blocks must be ≥ 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub sau: AttentionBlock,
    pub cau: AttentionBlock,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub input: (ParamId, ParamId),
    pub blocks: Vec<DecoderBlock>,
    pub output: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct HfrLayout {
    pub decoders: [Decoder; 3],
    /// Affine map `3d → 3d` applied to the masked-view representation.
    pub align: (ParamId, ParamId),
}

impl HfrLayout {
    pub(crate) fn build<T: Real>(
        cfg: &ModelConfig,
        hfr: &HfrConfig,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d;
        let decoders = Modality::ALL.map(|m| {
            let dm = cfg.feature_dims[m.index()];
            let p = format!("dec.{}", m.tag());
            let input = linear_params(store, &format!("{p}.in"), dm, d, rng);
            let blocks = (0..hfr.decoder_blocks)
                .map(|j| DecoderBlock {
                    sau: AttentionBlock::new(store, &format!("{p}.{j}.sau"), d, d, d, rng),
                    cau: AttentionBlock::new(store, &format!("{p}.{j}.cau"), d, d, d, rng),
                })
                .collect();
            let output = linear_params(store, &format!("{p}.out"), d, dm, rng);
            Decoder { input, blocks, output }
        });
        let align = linear_params(store, "align", 3 * d, 3 * d, rng);
        Self { decoders, align }
    }
}

/// Regenerates modality `m` (`[B·T_m, d_m]`) from its masked input and its
/// reinforced features `e` (`[B·T_m, d]`).
pub fn lfi_decode<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    p: &Bound,
    layout: &HfrLayout,
    batch: &Batch,
    m: Modality,
    e: Var,
) -> Result<(Var, Vec<Var>)> {
    let i = m.index();
    let mb = &batch.modalities[i];
    let dec = &layout.decoders[i];
    let x = g.constant(
        [batch.size * mb.pad_len, mb.dim],
        mb.masked.iter().map(|&v| T::lit(v as f64)).collect(),
    )?;
    let valid = mb.valid();
    let mut h = linear(g, p, x, dec.input.0, dec.input.1)?;
    let mut cross = Vec::with_capacity(dec.blocks.len());
    for block in &dec.blocks {
        let (s, _) = multi_head(g, p, &block.sau, h, h, batch.size, &valid, net.cfg.heads)?;
        let (c, probs) = multi_head(g, p, &block.cau, s, e, batch.size, &valid, net.cfg.heads)?;
        cross.push(probs);
        h = c;
    }
    let out = linear(g, p, h, dec.output.0, dec.output.1)?;
    Ok((g.mul_const(out, row_mask(&valid, mb.dim))?, cross))
}

/// Smooth-L1 reconstruction error summed over ablated entries of all
/// modalities, divided by the number of ablated entries (at least 1).
pub fn lfi_loss<T: Real>(g: &mut Graph<T>, batch: &Batch, imagined: &[Var; 3]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for m in Modality::ALL {
        let mb = &batch.modalities[m.index()];
        let target: Vec<T> = mb.complete.iter().map(|&v| T::lit(v as f64)).collect();
        let target = g.constant([batch.size * mb.pad_len, mb.dim], target)?;
        let diff = g.sub(target, imagined[m.index()])?;
        let err = g.smooth_l1(diff);
        let mask: Vec<T> = mb
            .mask
            .iter()
            .flat_map(|&f| std::iter::repeat_n(if f == 1 { T::one() } else { T::zero() }, mb.dim))
            .collect();
        let err = g.mul_const(err, mask)?;
        let s = g.sum(err);
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let count = batch.masked_elements().max(1);
    Ok(g.scale(total.expect("three modalities"), T::lit(1.0 / count as f64)))
}

/// Graph handles of the global alignment loss.
#[derive(Debug, Clone, Copy)]
pub struct GfaTerms {
    pub total: Var,
    pub ce_complete: Var,
    pub metric: Var,
}

/// `CE(label, complete-view probabilities) + metric(FC(h, θ_p), h̄)`.
#[allow(clippy::too_many_arguments)]
pub fn gfa_loss<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &HfrConfig,
    align: (ParamId, ParamId),
    h: Var,
    h_bar: Var,
    complete_logits: Var,
    labels: &[usize],
) -> Result<GfaTerms> {
    let ce_complete = g.softmax_cross_entropy(complete_logits, labels)?;
    let aligned = linear(g, p, h, align.0, align.1)?;
    let metric = match cfg.metric {
        Metric::Cmd => cmd(g, aligned, h_bar, cfg.cmd_order)?,
        Metric::Cosine => cosine_distance(g, aligned, h_bar)?,
        Metric::Jsd => jsd(g, aligned, h_bar)?,
        Metric::SmoothL1 => smooth_l1_distance(g, aligned, h_bar)?,
    };
    let total = g.add(ce_complete, metric)?;
    Ok(GfaTerms { total, ce_complete, metric })
}

/// Both views and every loss term of one training step.
#[derive(Debug, Clone)]
pub struct ReconTrace {
    pub masked: ForwardTrace,
    pub complete: ForwardTrace,
    /// `[B·T_m, d_m]` per modality, zero on padded rows.
    pub imagined: [Var; 3],
    /// Cross-attention probabilities over the reinforced features, per modality and block.
    pub cross_attention: [Vec<Var>; 3],
    pub ce: Var,
    pub lfi: Var,
    pub gfa: GfaTerms,
}

pub fn hfr_forward<T: Real>(g: &mut Graph<T>, net: &Network<T>, p: &Bound, batch: &Batch) -> Result<ReconTrace> {
    let (layout, cfg) = match (&net.hfr, &net.hfr_cfg) {
        (Some(l), Some(c)) => (l, c),
        _ => return Err(crate::Error::invalid("network", "reconstruction branch is disabled")),
    };
    let masked = mct_forward(g, net, p, batch, View::Masked)?;
    let complete = mct_forward(g, net, p, batch, View::Complete)?;
    let ce = g.softmax_cross_entropy(masked.logits, &batch.labels)?;
    let mut imagined = Vec::with_capacity(3);
    let mut cross = Vec::with_capacity(3);
    for m in Modality::ALL {
        let (d, c) = lfi_decode(g, net, p, layout, batch, m, masked.reinforced[m.index()])?;
        imagined.push(d);
        cross.push(c);
    }
    let imagined: [Var; 3] = imagined.try_into().unwrap();
    let lfi = lfi_loss(g, batch, &imagined)?;
    let gfa = gfa_loss(g, p, cfg, layout.align, masked.fused, complete.fused, complete.logits, &batch.labels)?;
    Ok(ReconTrace {
        masked,
        complete,
        imagined,
        cross_attention: cross.try_into().unwrap(),
        ce,
        lfi,
        gfa,
    })
}

/// `L = L_CE + α·L_GFA + β·L_LFI`.
pub fn total_loss(ce: f64, gfa: f64, lfi: f64, alpha: f64, beta: f64) -> f64 {
    ce + alpha * gfa + beta * lfi
}

/// Graph form of [`total_loss`].
pub fn total_loss_var<T: Real>(g: &mut Graph<T>, ce: Var, gfa: Var, lfi: Var, alpha: f64, beta: f64) -> Result<Var> {
    let a = g.scale(gfa, T::lit(alpha));
    let b = g.scale(lfi, T::lit(beta));
    let x = g.add(ce, a)?;
    Ok(g.add(x, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.25, 0.0, 0.0), 1.0);
        assert!((total_loss(1.0, 0.5, 0.25, 0.4, 0.6) - 1.35).abs() < 1e-15);
        let base = total_loss(1.0, 0.5, 0.25, 0.4, 0.6);
        assert!((total_loss(1.0, 0.5, 0.5, 0.4, 0.6) - base - 0.6 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn metric_names() {
        assert_eq!("smooth_l1".parse::<Metric>(), Ok(Metric::SmoothL1));
        assert!("l2".parse::<Metric>().is_err());
    }
}
