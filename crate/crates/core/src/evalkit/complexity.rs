//! Analytic parameter and multiply-accumulate counts. One MAC is one
//! multiply-add; softmax, normalization and activations are not counted.

use serde::Serialize;

use crate::hfr::HfrConfig;
use crate::mct::ModelConfig;

/// Lengths used for MAC estimates unless stated otherwise.
pub const DEFAULT_MAC_LENS: [usize; 3] = [400, 40, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// One re-scaled attention unit per modality over the hyper-modality.
    Mrau,
    /// Directional pairwise cross-modal blocks, `M(M−1)` of them, each with
    /// its own projections, feed-forward network and normalizations.
    PairwiseReference,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Complexity {
    pub params: u64,
    pub macs: u64,
}

impl std::ops::Add for Complexity {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            params: self.params + o.params,
            macs: self.macs + o.macs,
        }
    }
}

fn affine(fan_in: usize, fan_out: usize) -> u64 {
    (fan_in * fan_out + fan_out) as u64
}

/// Q, K, V and output projections.
fn attention_params(d: usize) -> u64 {
    4 * affine(d, d)
}

/// One attention + feed-forward block with two layer norms.
fn block_params(cfg: &ModelConfig) -> u64 {
    let (d, h) = (cfg.d, cfg.ffn_dim());
    attention_params(d) + affine(d, h) + affine(h, d) + 4 * d as u64
}

pub fn layer_params(cfg: &ModelConfig, kind: LayerKind) -> u64 {
    let m = 3u64;
    match kind {
        LayerKind::Mrau => m * block_params(cfg),
        LayerKind::PairwiseReference => m * (m - 1) * block_params(cfg),
    }
}

/// Attention MACs for `tq` queries over `tkv` keys, projections included.
fn attention_macs(d: usize, tq: usize, tkv: usize) -> u64 {
    let (d, tq, tkv) = (d as u64, tq as u64, tkv as u64);
    // Q and output projections on queries, K and V on the source,
    // then scores and the weighted value sum
    2 * tq * d * d + 2 * tkv * d * d + 2 * tq * tkv * d
}

fn ffn_macs(cfg: &ModelConfig, t: usize) -> u64 {
    2 * (t * cfg.d * cfg.ffn_dim()) as u64
}

/// Parameters and MACs of a single fusion layer at sequence lengths `lens`.
pub fn count_params_macs(cfg: &ModelConfig, kind: LayerKind, lens: [usize; 3]) -> Complexity {
    let d = cfg.d;
    let total: usize = lens.iter().sum();
    let macs = match kind {
        LayerKind::Mrau => lens
            .iter()
            .map(|&t| {
                let t64 = t as u64;
                let dd = (d * d) as u64;
                // Q, K, V, O projections once per modality; scores and values over ΣT
                4 * t64 * dd + 2 * t64 * total as u64 * d as u64 + ffn_macs(cfg, t)
            })
            .sum(),
        LayerKind::PairwiseReference => (0..3)
            .flat_map(|tgt| (0..3).filter(move |&src| src != tgt).map(move |src| (tgt, src)))
            .map(|(tgt, src)| attention_macs(d, lens[tgt], lens[src]) + ffn_macs(cfg, lens[tgt]))
            .sum(),
    };
    Complexity {
        params: layer_params(cfg, kind),
        macs,
    }
}

/// Whole-model counts. Training mode includes the reconstruction branch and
/// the second (complete-view) recognition pass; inference mode drops both.
pub fn model_complexity(cfg: &ModelConfig, hfr: Option<&HfrConfig>, lens: [usize; 3], training: bool) -> Complexity {
    let d = cfg.d;
    let mut recog = Complexity::default();
    for i in 0..3 {
        let (k, dm, t) = (cfg.kernel_sizes[i], cfg.feature_dims[i], lens[i]);
        recog = recog
            + Complexity {
                params: affine(k * dm, d),
                macs: (t * k * dm * d) as u64,
            };
        // pooling query, scores and weighted sum
        recog = recog
            + Complexity {
                params: d as u64,
                macs: 2 * (t * d) as u64,
            };
    }
    let layer = count_params_macs(cfg, LayerKind::Mrau, lens);
    recog = recog
        + Complexity {
            params: cfg.layers as u64 * layer.params,
            macs: cfg.layers as u64 * layer.macs,
        };
    let mut width = 3 * d;
    for j in 0..cfg.classifier_layers {
        let out = if j + 1 == cfg.classifier_layers { cfg.classes } else { d };
        recog = recog
            + Complexity {
                params: affine(width, out),
                macs: (width * out) as u64,
            };
        width = out;
    }
    let hfr = match (training, hfr) {
        (true, Some(h)) => h,
        _ => return recog,
    };
    let mut total = recog
        + Complexity {
            params: 0,
            macs: recog.macs,
        };
    for i in 0..3 {
        let (dm, t) = (cfg.feature_dims[i], lens[i]);
        let blocks = hfr.decoder_blocks as u64;
        total = total
            + Complexity {
                params: affine(dm, d) + affine(d, dm) + blocks * 2 * attention_params(d),
                macs: 2 * (t * dm * d) as u64 + blocks * 2 * attention_macs(d, t, t),
            };
    }
    total
        + Complexity {
            params: affine(3 * d, 3 * d),
            macs: (9 * d * d) as u64,
        }
}
