#![allow(dead_code)]

use mcthfr::datasim::{apply_masking, collate_masked, generate_range, Batch, GenConfig, LengthRange, MaskSet, MultimodalSample};
use mcthfr::mct::ModelConfig;

pub fn tiny_gen(seed: u64) -> GenConfig {
    let m = ModelConfig::tiny();
    GenConfig {
        classes: m.classes,
        dims: m.feature_dims,
        lengths: [
            LengthRange { min: 2, max: 6 },
            LengthRange { min: 1, max: 4 },
            LengthRange { min: 2, max: 5 },
        ],
        seed,
        ..GenConfig::default()
    }
}

pub fn tiny_samples(n: usize, seed: u64) -> Vec<MultimodalSample> {
    generate_range(&tiny_gen(seed), 0, n).unwrap()
}

pub fn masked_batch(samples: &[MultimodalSample], p: f64, seed: u64, max_lens: [usize; 3]) -> Batch {
    let masks: Vec<Option<MaskSet>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| Some(apply_masking(s, p, seed * 1000 + i as u64).1))
        .collect();
    let refs: Vec<_> = samples.iter().collect();
    let mrefs: Vec<_> = masks.iter().map(Option::as_ref).collect();
    collate_masked(&refs, &mrefs, max_lens)
}

/// Row-major `a (m×k) · b (k×n)` by explicit loops.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, fan_in: usize) -> Vec<f64> {
    let n = b.len();
    let mut y = matmul(x, w, rows, fan_in, n);
    for r in 0..rows {
        for j in 0..n {
            y[r * n + j] += b[j];
        }
    }
    y
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = gain.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out.push((row[j] - mean) / (var + eps).sqrt() * gain[j] + bias[j]);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
