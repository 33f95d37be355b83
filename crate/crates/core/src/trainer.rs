//! Training strategies, curriculum, early stopping and run logs.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tensorlab::{AdamW, AdamWConfig, Graph, Real, TensorError, Var};

use crate::datasim::{apply_masking, collate_masked, Batch, MaskSet, MultimodalSample};
use crate::hfr::{hfr_forward, total_loss_var, HfrConfig};
use crate::mct::{mct_forward, ModelConfig, Network, View};
use crate::params::Bound;
use crate::seed::{derive_seed, rng_for, salt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Never mask.
    Complete,
    /// Mask every sample at `p_miss`, masks redrawn every epoch.
    OneToOne,
    /// Mask a ramped fraction of every batch at `p_miss`, masks redrawn every step.
    Dynamic,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "complete" => Ok(Self::Complete),
            "one-to-one" | "one_to_one" => Ok(Self::OneToOne),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown strategy {other:?} (expected complete, one-to-one or dynamic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub strategy: Strategy,
    pub alpha: f64,
    pub beta: f64,
    /// Missing rate used by the masking strategies (the fixed rate of one-to-one).
    pub p_miss: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Epochs over which the dynamic fraction rises from 0 to 1.
    pub ramp_epochs: usize,
    pub seed: u64,
    /// Train the reconstruction branch; when off the model is pure MCT.
    pub use_hfr: bool,
    pub hfr: HfrConfig,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dynamic,
            alpha: 0.4,
            beta: 0.6,
            p_miss: 0.2,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 40,
            patience: 8,
            ramp_epochs: 5,
            seed: 0,
            use_hfr: true,
            hfr: HfrConfig::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("train.{name} = {v} (need ≥ 0)"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_miss) {
            errs.push(format!("train.p_miss = {} (need 0 ≤ p ≤ 1)", self.p_miss));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("train.lr = {} (need > 0)", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("train.weight_decay = {} (need ≥ 0)", self.weight_decay));
        }
        if self.batch_size < 2 {
            errs.push(format!("train.batch_size = {} (need ≥ 2)", self.batch_size));
        }
        if self.max_epochs == 0 {
            errs.push("train.max_epochs must be ≥ 1".into());
        }
        if self.patience == 0 {
            errs.push("train.patience must be ≥ 1".into());
        }
        if self.ramp_epochs == 0 {
            errs.push("train.ramp_epochs must be ≥ 1".into());
        }
        errs.extend(self.hfr.validate().into_iter().map(|e| format!("train.{e}")));
        errs
    }

    pub fn build_network<T: Real>(&self, model: &ModelConfig) -> Result<Network<T>> {
        Network::new(model.clone(), self.use_hfr.then(|| self.hfr.clone()), self.seed)
    }
}

/// Fraction of each batch trained on masked features in `epoch` (1-based):
/// `min(1, (epoch − 1) / (ramp_epochs − 1))`.
pub fn ramp_proportion(epoch: usize, ramp_epochs: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if ramp_epochs <= 1 {
        return 1.0;
    }
    ((epoch - 1) as f64 / (ramp_epochs - 1) as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub gfa: f64,
    pub lfi: f64,
}

impl LossParts {
    fn accumulate(&mut self, other: LossParts, weight: f64) {
        self.total += weight * other.total;
        self.ce += weight * other.ce;
        self.gfa += weight * other.gfa;
        self.lfi += weight * other.lfi;
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            total: self.total * s,
            ce: self.ce * s,
            gfa: self.gfa * s,
            lfi: self.lfi * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub incomplete: usize,
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossParts,
    pub valid: LossParts,
    /// Validation accuracy of the argmax prediction.
    pub valid_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Epoch at which patience ran out, if it did.
    pub early_stop_epoch: Option<usize>,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
}

impl TrainLog {
    /// One JSON object per step and per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = |v: serde_json::Value| writeln!(w, "{v}").map_err(|e| Error::io(path, e));
        for s in &self.steps {
            line(serde_json::json!({ "kind": "step", "record": s }))?;
        }
        for e in &self.epochs {
            line(serde_json::json!({ "kind": "epoch", "record": e }))?;
        }
        drop(line);
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let summary = serde_json::json!({
            "epochs": self.epochs.len(),
            "best_epoch": self.best_epoch,
            "best_valid_loss": self.best_valid_loss,
            "early_stop_epoch": self.early_stop_epoch,
            "wall_seconds": self.wall_seconds,
            "checkpoint": self.checkpoint,
            "final_train": self.epochs.last().map(|e| e.train),
            "best_valid": self.epochs.get(self.best_epoch.saturating_sub(1)).map(|e| e.valid),
        });
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch.
    pub network: Network<T>,
    pub log: TrainLog,
}

/// Splits `order` into batches of `size`; a trailing batch of one sample
/// joins the previous batch so batch statistics stay defined.
pub fn batch_indices(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

pub(crate) struct StepGraph<T> {
    pub g: Graph<T>,
    pub p: Bound,
    pub loss: Var,
    pub parts: LossParts,
    pub logits: Var,
}

pub(crate) fn build_loss<T: Real>(net: &Network<T>, plan: &TrainPlan, batch: &Batch) -> Result<StepGraph<T>> {
    let mut g = Graph::new();
    let p = net.store.bind(&mut g);
    let (loss, parts, logits) = if net.hfr.is_some() {
        let t = hfr_forward(&mut g, net, &p, batch)?;
        let loss = total_loss_var(&mut g, t.ce, t.gfa.total, t.lfi, plan.alpha, plan.beta)?;
        let parts = LossParts {
            total: g.scalar(loss).as_f64(),
            ce: g.scalar(t.ce).as_f64(),
            gfa: g.scalar(t.gfa.total).as_f64(),
            lfi: g.scalar(t.lfi).as_f64(),
        };
        (loss, parts, t.masked.logits)
    } else {
        let t = mct_forward(&mut g, net, &p, batch, View::Masked)?;
        let ce = g.softmax_cross_entropy(t.logits, &batch.labels)?;
        let v = g.scalar(ce).as_f64();
        (ce, LossParts { total: v, ce: v, gfa: 0.0, lfi: 0.0 }, t.logits)
    };
    Ok(StepGraph { g, p, loss, parts, logits })
}

fn masked_batch(
    samples: &[MultimodalSample],
    idx: &[usize],
    masks: &[Option<MaskSet>],
    max_lens: [usize; 3],
) -> Batch {
    let refs: Vec<&MultimodalSample> = idx.iter().map(|&i| &samples[i]).collect();
    let mrefs: Vec<Option<&MaskSet>> = masks.iter().map(Option::as_ref).collect();
    collate_masked(&refs, &mrefs, max_lens)
}

/// Validation loss and accuracy with fixed masks.
fn evaluate<T: Real>(
    net: &Network<T>,
    plan: &TrainPlan,
    valid: &[MultimodalSample],
    valid_masks: &[Option<MaskSet>],
) -> Result<(LossParts, f64)> {
    let order: Vec<usize> = (0..valid.len()).collect();
    let mut acc = LossParts::default();
    let mut correct = 0usize;
    for idx in batch_indices(&order, plan.batch_size) {
        let masks: Vec<Option<MaskSet>> = idx.iter().map(|&i| valid_masks[i].clone()).collect();
        let batch = masked_batch(valid, &idx, &masks, net.cfg.max_lens);
        let sg = build_loss(net, plan, &batch)?;
        acc.accumulate(sg.parts, batch.size as f64);
        let c = net.cfg.classes;
        for (row, &y) in sg.g.value(sg.logits).chunks(c).zip(&batch.labels) {
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            correct += (arg == y) as usize;
        }
    }
    let n = valid.len() as f64;
    Ok((acc.scaled(1.0 / n), correct as f64 / n))
}

/// Non-finite values surface as degenerate softmax rows inside the forward pass.
fn diverged(e: Error, step: u64) -> Error {
    match e {
        Error::Tensor(TensorError::DegenerateRow { .. }) => Error::Diverged { step, value: f64::NAN },
        other => other,
    }
}

/// Trains `net` under `plan`, returning the best-validation parameters.
/// `on_epoch` observes every finished epoch.
pub fn train<T: Real>(
    mut net: Network<T>,
    plan: &TrainPlan,
    train_set: &[MultimodalSample],
    valid_set: &[MultimodalSample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let errs = plan.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if train_set.len() < 2 || valid_set.is_empty() {
        return Err(Error::invalid(
            "splits",
            format!("{} train / {} validation samples (need ≥ 2 / ≥ 1)", train_set.len(), valid_set.len()),
        ));
    }
    let started = Instant::now();
    let max_lens = net.cfg.max_lens;
    let valid_masks: Vec<Option<MaskSet>> = valid_set
        .iter()
        .enumerate()
        .map(|(i, s)| match plan.strategy {
            Strategy::Complete => None,
            _ => Some(apply_masking(s, plan.p_miss, derive_seed(&[plan.seed, salt::VALID_MASK, i as u64])).1),
        })
        .collect();
    let sizes: Vec<usize> = net.store.entries().iter().map(|e| e.tensor.numel()).collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: plan.lr,
            weight_decay: plan.weight_decay,
            ..AdamWConfig::default()
        },
        sizes,
    );
    let names: Vec<String> = net.store.entries().iter().map(|e| e.name.clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();

    let mut log = TrainLog {
        epochs: Vec::new(),
        steps: Vec::new(),
        best_epoch: 0,
        best_valid_loss: f64::INFINITY,
        early_stop_epoch: None,
        wall_seconds: 0.0,
        checkpoint: None,
    };
    let mut best = net.store.clone();
    let mut stale = 0usize;
    let mut step: u64 = 0;
    for epoch in 1..=plan.max_epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_for(&[plan.seed, salt::SHUFFLE, epoch as u64]));
        let mut acc = LossParts::default();
        for idx in batch_indices(&order, plan.batch_size) {
            let b = idx.len();
            let mut flagged = vec![false; b];
            let mask_seed = |round: u64, i: usize| derive_seed(&[plan.seed, salt::MASK, round, i as u64]);
            let masks: Vec<Option<MaskSet>> = match plan.strategy {
                Strategy::Complete => vec![None; b],
                Strategy::OneToOne => {
                    flagged.iter_mut().for_each(|f| *f = true);
                    idx.iter()
                        .map(|&i| Some(apply_masking(&train_set[i], plan.p_miss, mask_seed(epoch as u64, i)).1))
                        .collect()
                }
                Strategy::Dynamic => {
                    let n = (ramp_proportion(epoch, plan.ramp_epochs) * b as f64).floor() as usize;
                    let mut pos: Vec<usize> = (0..b).collect();
                    pos.shuffle(&mut rng_for(&[plan.seed, salt::SELECT, step]));
                    for &j in &pos[..n] {
                        flagged[j] = true;
                    }
                    idx.iter()
                        .zip(&flagged)
                        .map(|(&i, &f)| f.then(|| apply_masking(&train_set[i], plan.p_miss, mask_seed(step, i)).1))
                        .collect()
                }
            };
            let batch = masked_batch(train_set, &idx, &masks, max_lens);
            let mut sg = build_loss(&net, plan, &batch).map_err(|e| diverged(e, step))?;
            if !sg.parts.total.is_finite() {
                return Err(Error::Diverged { step, value: sg.parts.total });
            }
            let grads = sg.g.backward(sg.loss)?;
            let grad_bufs: Vec<Vec<T>> = sg.p.vars().iter().map(|&v| grads.wrt(v)).collect();
            let grad_refs: Vec<&[T]> = grad_bufs.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [T]> = net.store.entries_mut().iter_mut().map(|e| e.tensor.values_mut()).collect();
            opt.step(&names, &mut params, &grad_refs)?;
            acc.accumulate(sg.parts, b as f64);
            log.steps.push(StepRecord {
                step,
                epoch,
                batch: b,
                incomplete: flagged.iter().filter(|&&f| f).count(),
                loss: sg.parts,
            });
            step += 1;
        }
        let (valid, valid_accuracy) = evaluate(&net, plan, valid_set, &valid_masks).map_err(|e| diverged(e, step))?;
        if !valid.total.is_finite() {
            return Err(Error::Diverged { step, value: valid.total });
        }
        let record = EpochRecord {
            epoch,
            train: acc.scaled(1.0 / train_set.len() as f64),
            valid,
            valid_accuracy,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
        if valid.total < log.best_valid_loss {
            log.best_valid_loss = valid.total;
            log.best_epoch = epoch;
            best = net.store.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= plan.patience {
                log.early_stop_epoch = Some(epoch);
                break;
            }
        }
    }
    net.store = best;
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { network: net, log })
}
