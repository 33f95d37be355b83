//! The modality-collaborative transformer.
//!
//! Each modality is encoded by a temporal convolution plus sinusoidal
//! positions, reinforced by `N` stacked re-scaled attention layers that attend
//! over the temporal concatenation of all modalities (the hyper-modality),
//! pooled with a learned query and classified from the concatenated pooled
//! vectors.

pub(crate) mod attention;
pub(crate) mod forward;

pub use attention::{attention, key_padding_bias, AttentionBlock};
pub use forward::{
    attention_pool, ce_loss, classify_logits, mct_forward, mrau_forward, unimodal_encode, ForwardTrace, View,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorlab::Real;

use crate::hfr::{HfrConfig, HfrLayout};
use crate::params::{Init, ParamId, ParamStore};
use crate::seed::{rng_for, salt};
use crate::{Error, Modality, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared hidden width.
    pub d: usize,
    /// Stacked re-scaled attention layers.
    pub layers: usize,
    pub heads: usize,
    pub d_k: usize,
    pub kernel_sizes: [usize; 3],
    /// Truncation lengths; also the reference lengths of the extrapolation factor.
    pub max_lens: [usize; 3],
    pub classes: usize,
    /// Feed-forward inner width; `2·d` when absent.
    pub ffn_hidden: Option<usize>,
    /// Input feature width per modality.
    pub feature_dims: [usize; 3],
    /// Affine layers in the classifier head (ReLU between them).
    pub classifier_layers: usize,
    pub gamma_b: bool,
    pub gamma_e: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            layers: 4,
            heads: 4,
            d_k: 32,
            kernel_sizes: [3, 3, 1],
            max_lens: [400, 40, 50],
            classes: 4,
            ffn_hidden: None,
            feature_dims: [6, 4, 8],
            classifier_layers: 1,
            gamma_b: true,
            gamma_e: true,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by the synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            d: 16,
            layers: 1,
            heads: 2,
            d_k: 8,
            max_lens: [32, 8, 10],
            ..Self::default()
        }
    }

    /// Smallest configuration exercised by gradient checks.
    pub fn tiny() -> Self {
        Self {
            d: 8,
            layers: 1,
            heads: 2,
            d_k: 4,
            max_lens: [6, 4, 5],
            classes: 3,
            feature_dims: [3, 2, 4],
            ..Self::default()
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_hidden.unwrap_or(2 * self.d)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.heads == 0 || self.heads * self.d_k != self.d {
            errs.push(format!(
                "model.heads × model.d_k = {} × {} must equal model.d = {}",
                self.heads, self.d_k, self.d
            ));
        }
        for m in Modality::ALL {
            let i = m.index();
            if self.kernel_sizes[i] % 2 == 0 {
                errs.push(format!("model.kernel_sizes[{}] = {} must be odd", m.tag(), self.kernel_sizes[i]));
            }
            if self.max_lens[i] == 0 {
                errs.push(format!("model.max_lens[{}] must be ≥ 1", m.tag()));
            }
            if self.feature_dims[i] == 0 {
                errs.push(format!("model.feature_dims[{}] must be ≥ 1", m.tag()));
            }
        }
        if self.classes < 2 {
            errs.push(format!("model.classes = {} (need ≥ 2)", self.classes));
        }
        if self.classifier_layers == 0 {
            errs.push("model.classifier_layers must be ≥ 1".into());
        }
        if self.ffn_dim() == 0 {
            errs.push("model.ffn_hidden must be ≥ 1".into());
        }
        if !(self.ln_eps > 0.0) {
            errs.push(format!("model.ln_eps = {} (need > 0)", self.ln_eps));
        }
        errs
    }

    /// Compact shape signature for mismatch reports.
    pub fn signature(&self) -> String {
        format!(
            "classes={} dims=({},{},{})",
            self.classes, self.feature_dims[0], self.feature_dims[1], self.feature_dims[2]
        )
    }
}

/// Per-sample key scales: `γ_b(m) = 1/√T_m` and
/// `γ_e = ln(ΣT_m) / ln(ΣT_m^max)`, with `ΣT_m` clamped to at least 2.
pub fn rescale_factors(true_lens: [usize; 3], max_lens: [usize; 3]) -> Result<([f64; 3], f64)> {
    if let Some(m) = Modality::ALL.into_iter().find(|m| true_lens[m.index()] == 0) {
        return Err(Error::invalid("sequence length", format!("modality {} has length 0", m.tag())));
    }
    let total = true_lens.iter().sum::<usize>().max(2) as f64;
    let reference = max_lens.iter().sum::<usize>().max(2) as f64;
    let gamma_b = true_lens.map(|t| 1.0 / (t as f64).sqrt());
    Ok((gamma_b, total.ln() / reference.ln()))
}

/// Parameter handles of one re-scaled attention layer for one modality.
#[derive(Debug, Clone)]
pub struct MrauBranch {
    pub attn: AttentionBlock,
    pub ffn1_w: ParamId,
    pub ffn1_b: ParamId,
    pub ffn2_w: ParamId,
    pub ffn2_b: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct MctLayout {
    pub conv_w: [ParamId; 3],
    pub conv_b: [ParamId; 3],
    pub layers: Vec<[MrauBranch; 3]>,
    pub pool: [ParamId; 3],
    pub classifier: Vec<(ParamId, ParamId)>,
}

pub(crate) fn linear_params<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> (ParamId, ParamId) {
    let w = store.add(format!("{prefix}.w"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out }, rng);
    let b = store.add(format!("{prefix}.b"), &[fan_out], Init::Zeros, rng);
    (w, b)
}

impl MctLayout {
    fn build<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for m in Modality::ALL {
            let (k, dm) = (cfg.kernel_sizes[m.index()], cfg.feature_dims[m.index()]);
            conv_w.push(store.add(
                format!("enc.{}.weight", m.tag()),
                &[k, dm, d],
                Init::Xavier { fan_in: k * dm, fan_out: d },
                rng,
            ));
            conv_b.push(store.add(format!("enc.{}.bias", m.tag()), &[d], Init::Zeros, rng));
        }
        let hidden = cfg.ffn_dim();
        let layers = (0..cfg.layers)
            .map(|i| {
                Modality::ALL.map(|m| {
                    let p = format!("mrau{i}.{}", m.tag());
                    let attn = AttentionBlock::new(store, &p, d, d, d, rng);
                    let (ffn1_w, ffn1_b) = linear_params(store, &format!("{p}.ffn1"), d, hidden, rng);
                    let (ffn2_w, ffn2_b) = linear_params(store, &format!("{p}.ffn2"), hidden, d, rng);
                    let ln1_gain = store.add(format!("{p}.ln1.gain"), &[d], Init::Ones, rng);
                    let ln1_bias = store.add(format!("{p}.ln1.bias"), &[d], Init::Zeros, rng);
                    let ln2_gain = store.add(format!("{p}.ln2.gain"), &[d], Init::Ones, rng);
                    let ln2_bias = store.add(format!("{p}.ln2.bias"), &[d], Init::Zeros, rng);
                    MrauBranch {
                        attn,
                        ffn1_w,
                        ffn1_b,
                        ffn2_w,
                        ffn2_b,
                        ln1_gain,
                        ln1_bias,
                        ln2_gain,
                        ln2_bias,
                    }
                })
            })
            .collect();
        let pool = Modality::ALL.map(|m| {
            store.add(format!("pool.{}.query", m.tag()), &[d], Init::Xavier { fan_in: d, fan_out: 1 }, rng)
        });
        let mut classifier = Vec::new();
        let mut width = 3 * d;
        for j in 0..cfg.classifier_layers {
            let out = if j + 1 == cfg.classifier_layers { cfg.classes } else { d };
            classifier.push(linear_params(store, &format!("cls.{j}"), width, out, rng));
            width = out;
        }
        Self {
            conv_w: conv_w.try_into().unwrap(),
            conv_b: conv_b.try_into().unwrap(),
            layers,
            pool,
            classifier,
        }
    }
}

/// All learnable state of the model: the recognition branch and, when
/// enabled, the reconstruction branch, sharing one canonical parameter store.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub cfg: ModelConfig,
    pub hfr_cfg: Option<HfrConfig>,
    pub store: ParamStore<T>,
    pub mct: MctLayout,
    pub hfr: Option<HfrLayout>,
}

impl<T: Real> Network<T> {
    pub fn new(cfg: ModelConfig, hfr_cfg: Option<HfrConfig>, seed: u64) -> Result<Self> {
        let mut errs = cfg.validate();
        if let Some(h) = &hfr_cfg {
            errs.extend(h.validate());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut rng = rng_for(&[seed, salt::INIT]);
        let mut store = ParamStore::new();
        let mct = MctLayout::build(&cfg, &mut store, &mut rng);
        let hfr = hfr_cfg.as_ref().map(|h| HfrLayout::build(&cfg, h, &mut store, &mut rng));
        Ok(Self {
            cfg,
            hfr_cfg,
            store,
            mct,
            hfr,
        })
    }

    /// Scalars used at inference time (the reconstruction branch is dropped).
    pub fn inference_param_count(&self) -> usize {
        self.store.count_with_prefix(&["enc.", "mrau", "pool.", "cls."])
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            cfg: self.cfg.clone(),
            hfr_cfg: self.hfr_cfg.clone(),
            store: self.store.cast(),
            mct: self.mct.clone(),
            hfr: self.hfr.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_factor_is_one_at_max_length() {
        let (_, ge) = rescale_factors([400, 40, 50], [400, 40, 50]).unwrap();
        assert_eq!(ge, 1.0);
    }

    #[test]
    fn balance_factor() {
        let (gb, _) = rescale_factors([4, 9, 1], [400, 40, 50]).unwrap();
        assert_eq!(gb, [0.5, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn extrapolation_log_ratio() {
        // ln(122)/ln(490) evaluated to 20 digits
        let (_, ge) = rescale_factors([100, 10, 12], [400, 40, 50]).unwrap();
        assert!((ge - 0.775_541_919_105_255).abs() < 1e-12, "{ge}");
    }

    #[test]
    fn zero_length_rejected() {
        assert!(rescale_factors([0, 1, 1], [4, 4, 4]).is_err());
    }

    #[test]
    fn factors_are_monotone() {
        let mut last = 0.0;
        for total in 3..200 {
            let (_, ge) = rescale_factors([total - 2, 1, 1], [100, 10, 10]).unwrap();
            assert!(ge > last);
            last = ge;
        }
        let mut last = f64::INFINITY;
        for t in 1..100 {
            let (gb, _) = rescale_factors([t, 1, 1], [100, 10, 10]).unwrap();
            assert!(gb[0] < last);
            last = gb[0];
        }
    }

    #[test]
    fn config_validation_lists_all() {
        let cfg = ModelConfig {
            heads: 3,
            kernel_sizes: [2, 3, 4],
            classes: 1,
            ..Default::default()
        };
        assert_eq!(cfg.validate().len(), 4);
        assert!(ModelConfig::default().validate().is_empty());
        assert!(ModelConfig::benchmark().validate().is_empty());
        assert!(ModelConfig::tiny().validate().is_empty());
    }
}
