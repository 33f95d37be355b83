use super::{MaskSet, MultimodalSample};

/// One modality of a padded batch; buffers are `size × pad_len × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBatch {
    pub pad_len: usize,
    pub dim: usize,
    pub complete: Vec<f32>,
    pub masked: Vec<f32>,
    /// `size × pad_len`; 1 marks an ablated step, never a padding step.
    pub mask: Vec<u8>,
    /// True lengths after truncation.
    pub lengths: Vec<usize>,
}

impl ModalityBatch {
    /// `size × pad_len` flags, `true` for real (non-padding) steps.
    pub fn valid(&self) -> Vec<bool> {
        let mut v = Vec::with_capacity(self.lengths.len() * self.pad_len);
        for &len in &self.lengths {
            v.extend((0..self.pad_len).map(|t| t < len));
        }
        v
    }

    /// Number of ablated feature entries (steps × dim).
    pub fn masked_elements(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count() * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub modalities: [ModalityBatch; 3],
    pub labels: Vec<usize>,
    pub incomplete: Vec<bool>,
}

impl Batch {
    pub fn lengths(&self, b: usize) -> [usize; 3] {
        [0, 1, 2].map(|i| self.modalities[i].lengths[b])
    }

    pub fn masked_elements(&self) -> usize {
        self.modalities.iter().map(ModalityBatch::masked_elements).sum()
    }
}

/// Pads (with zeros) or truncates (keeping the prefix) every modality to the
/// longest sequence in the batch, capped at `max_lens`. No sample is masked.
pub fn collate(samples: &[&MultimodalSample], max_lens: [usize; 3]) -> Batch {
    let none = vec![None; samples.len()];
    collate_masked(samples, &none, max_lens)
}

/// Like [`collate`], but samples with a mask get a masked view and are
/// flagged incomplete. Masks index the untruncated sequence.
pub fn collate_masked(samples: &[&MultimodalSample], masks: &[Option<&MaskSet>], max_lens: [usize; 3]) -> Batch {
    assert!(!samples.is_empty(), "collate needs at least one sample");
    assert_eq!(samples.len(), masks.len());
    let size = samples.len();
    let modalities = [0, 1, 2].map(|i| {
        let dim = samples[0].seqs[i].dim;
        let lengths: Vec<usize> = samples.iter().map(|s| s.seqs[i].len.min(max_lens[i])).collect();
        let pad_len = lengths.iter().copied().max().unwrap_or(0);
        let mut complete = vec![0.0; size * pad_len * dim];
        let mut mask = vec![0u8; size * pad_len];
        for (b, s) in samples.iter().enumerate() {
            let seq = &s.seqs[i];
            assert_eq!(seq.dim, dim, "feature width differs within batch");
            let n = lengths[b] * dim;
            complete[b * pad_len * dim..b * pad_len * dim + n].copy_from_slice(&seq.values[..n]);
            if let Some(m) = masks[b] {
                mask[b * pad_len..b * pad_len + lengths[b]].copy_from_slice(&m.indicators[i][..lengths[b]]);
            }
        }
        let mut masked = complete.clone();
        for (step, &m) in mask.iter().enumerate() {
            if m == 1 {
                masked[step * dim..(step + 1) * dim].fill(0.0);
            }
        }
        ModalityBatch {
            pad_len,
            dim,
            complete,
            masked,
            mask,
            lengths,
        }
    });
    Batch {
        size,
        modalities,
        labels: samples.iter().map(|s| s.label).collect(),
        incomplete: masks.iter().map(Option::is_some).collect(),
    }
}
