use rand::Rng;

use super::MultimodalSample;
use crate::seed::rng_for;

/// Per-step ablation indicators, 1 = ablated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub indicators: [Vec<u8>; 3],
}

impl MaskSet {
    pub fn none(lengths: [usize; 3]) -> Self {
        Self {
            indicators: lengths.map(|n| vec![0; n]),
        }
    }

    pub fn ablated_steps(&self) -> usize {
        self.indicators
            .iter()
            .map(|v| v.iter().filter(|&&x| x == 1).count())
            .sum()
    }

    pub fn total_steps(&self) -> usize {
        self.indicators.iter().map(Vec::len).sum()
    }
}

/// Ablates every time step of every modality independently with probability
/// `p_miss`, replacing it by the zero vector.
///
/// One uniform draw is made per step, so for a fixed seed the mask at a
/// higher rate contains the mask at a lower one.
pub fn apply_masking(sample: &MultimodalSample, p_miss: f64, seed: u64) -> (MultimodalSample, MaskSet) {
    let mut rng = rng_for(&[seed]);
    let mut masked = sample.clone();
    let indicators = [0, 1, 2].map(|i| {
        let seq = &mut masked.seqs[i];
        (0..seq.len)
            .map(|t| {
                let drop = rng.random::<f64>() < p_miss;
                if drop {
                    seq.values[t * seq.dim..(t + 1) * seq.dim].fill(0.0);
                }
                u8::from(drop)
            })
            .collect()
    });
    (masked, MaskSet { indicators })
}
