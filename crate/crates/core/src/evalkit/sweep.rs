use serde::{Deserialize, Serialize};
use tensorlab::Real;

use super::{auilc, compute_metrics, MetricsRecord, Scores};
use crate::datasim::{apply_masking, collate_masked, MaskSet, MultimodalSample};
use crate::mct::{Network, View};
use crate::seed::{derive_seed, salt};
use crate::{Error, Result};

/// `{0.0, 0.1, …, 0.9}`.
pub fn default_rates() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub mask_seeds: Vec<u64>,
    pub batch_size: usize,
    /// Truncation lengths at evaluation; the model's own when absent.
    pub max_lens: Option<[usize; 3]>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rates: default_rates(),
            mask_seeds: vec![0, 1, 2, 3, 4],
            batch_size: 64,
            max_lens: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.rates.is_empty() {
            errs.push("eval.rates must not be empty".into());
        }
        if self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            errs.push(format!("eval.rates {:?} must lie in [0, 1]", self.rates));
        }
        if self.rates.windows(2).any(|w| !(w[1] > w[0])) {
            errs.push(format!("eval.rates {:?} must be strictly increasing", self.rates));
        }
        if self.mask_seeds.is_empty() {
            errs.push("eval.mask_seeds must not be empty".into());
        }
        if self.batch_size == 0 {
            errs.push("eval.batch_size must be ≥ 1".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub seed: u64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rates: Vec<f64>,
    pub mask_seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    /// Scores averaged over mask seeds, one entry per rate.
    pub mean: Vec<Scores>,
    /// Absent when fewer than two rates were evaluated.
    pub auilc: Option<Scores>,
    pub samples: usize,
    pub model: String,
    pub inference_params: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,seed,UA,WA,UF1,WF1\n");
        for r in &self.rows {
            let s = r.metrics.scores;
            out.push_str(&format!(
                "{:.2},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.rate, r.seed, s.ua, s.wa, s.uf1, s.wf1
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// AUILC recomputed from the stored mean scores.
    pub fn recompute_auilc(&self) -> Option<Scores> {
        let col = |f: fn(&Scores) -> f64| auilc(&self.mean.iter().map(f).collect::<Vec<_>>(), &self.rates).ok();
        Some(Scores {
            ua: col(|s| s.ua)?,
            wa: col(|s| s.wa)?,
            uf1: col(|s| s.uf1)?,
            wf1: col(|s| s.wf1)?,
        })
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > p[best] { j } else { best })
}

/// Masked predictions of the recognition branch alone.
pub(crate) fn predict_masked<T: Real>(
    net: &Network<T>,
    samples: &[MultimodalSample],
    masks: &[Option<MaskSet>],
    batch_size: usize,
    max_lens: [usize; 3],
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(samples.len());
    for (chunk, mchunk) in samples.chunks(batch_size).zip(masks.chunks(batch_size)) {
        let refs: Vec<&MultimodalSample> = chunk.iter().collect();
        let mrefs: Vec<Option<&MaskSet>> = mchunk.iter().map(Option::as_ref).collect();
        let batch = collate_masked(&refs, &mrefs, max_lens);
        preds.extend(net.predict_proba(&batch, View::Masked)?.iter().map(|p| argmax(p)));
    }
    Ok(preds)
}

/// Scores `net` on `samples` at every missing rate and mask seed.
pub fn sweep<T: Real>(net: &Network<T>, samples: &[MultimodalSample], cfg: &SweepConfig) -> Result<SweepReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if samples.is_empty() {
        return Err(Error::invalid("sweep", "no samples"));
    }
    let dims = samples[0].seqs.each_ref().map(|s| s.dim);
    if dims != net.cfg.feature_dims || samples.iter().any(|s| s.label >= net.cfg.classes) {
        let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
        return Err(Error::Mismatch {
            checkpoint: net.cfg.signature(),
            data: format!("classes≥{} dims=({},{},{})", classes, dims[0], dims[1], dims[2]),
        });
    }
    let max_lens = cfg.max_lens.unwrap_or(net.cfg.max_lens);
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut rows = Vec::with_capacity(cfg.rates.len() * cfg.mask_seeds.len());
    let mut mean = Vec::with_capacity(cfg.rates.len());
    for &rate in &cfg.rates {
        let mut acc = Scores::default();
        for &seed in &cfg.mask_seeds {
            let masks: Vec<Option<MaskSet>> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| Some(apply_masking(s, rate, derive_seed(&[seed, salt::EVAL_MASK, i as u64])).1))
                .collect();
            let preds = predict_masked(net, samples, &masks, cfg.batch_size, max_lens)?;
            let metrics = compute_metrics(&preds, &truth, net.cfg.classes)?;
            let s = metrics.scores;
            acc = Scores {
                ua: acc.ua + s.ua,
                wa: acc.wa + s.wa,
                uf1: acc.uf1 + s.uf1,
                wf1: acc.wf1 + s.wf1,
            };
            rows.push(SweepRow { rate, seed, metrics });
        }
        mean.push(acc.map(|v| v / cfg.mask_seeds.len() as f64));
    }
    let mut report = SweepReport {
        rates: cfg.rates.clone(),
        mask_seeds: cfg.mask_seeds.clone(),
        rows,
        mean,
        auilc: None,
        samples: samples.len(),
        model: net.cfg.signature(),
        inference_params: net.inference_param_count(),
    };
    report.auilc = report.recompute_auilc();
    Ok(report)
}
