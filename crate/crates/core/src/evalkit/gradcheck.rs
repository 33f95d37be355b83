//! Analytic gradients of the full training objective against central
//! finite differences, in 64-bit arithmetic.

use serde::Serialize;
use tensorlab::numeric::relative_error;

use crate::datasim::{apply_masking, collate_masked, generate_range, Batch, GenConfig, LengthRange, MaskSet};
use crate::hfr::{HfrConfig, Metric};
use crate::mct::{ModelConfig, Network};
use crate::params::group_of;
use crate::seed::derive_seed;
use crate::trainer::{build_loss, TrainPlan};
use crate::{Error, Result};

/// Scale applied to the analytic gradient of one group, to prove the
/// checker notices.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub group: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    /// Alignment metrics checked in turn.
    pub metrics: Vec<Metric>,
    pub batch: usize,
    pub p_miss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            metrics: vec![Metric::Cmd, Metric::Cosine, Metric::Jsd],
            batch: 4,
            p_miss: 0.3,
            alpha: 0.4,
            beta: 0.6,
            step: 1e-5,
            floor: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupResult {
    pub group: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_metric: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupResult> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.tolerance
    }

    pub fn failing(&self) -> impl Iterator<Item = &GroupResult> {
        self.groups.iter().filter(|g| g.max_rel_error > self.tolerance)
    }

    /// Aligned text table, one row per parameter group.
    pub fn table(&self) -> String {
        let w = self.groups.iter().map(|g| g.group.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<w$}  {:>6}  {:>12}  {:<9}  {}\n",
            "group", "probes", "max_rel_err", "metric", "worst"
        );
        for g in &self.groups {
            let flag = if g.max_rel_error > self.tolerance { "  FAIL" } else { "" };
            out.push_str(&format!(
                "{:<w$}  {:>6}  {:>12.3e}  {:<9}  {}[{}]{flag}\n",
                g.group, g.probes, g.max_rel_error, g.worst_metric, g.worst_param, g.worst_index
            ));
        }
        out
    }
}

fn probe_batch(cfg: &GradcheckConfig) -> Result<Batch> {
    let m = &cfg.model;
    let gen = GenConfig {
        classes: m.classes,
        dims: m.feature_dims,
        lengths: m.max_lens.map(|t| LengthRange { min: t.div_ceil(2), max: t }),
        seed: cfg.seed,
        ..GenConfig::default()
    };
    let samples = generate_range(&gen, 0, cfg.batch)?;
    let masks: Vec<Option<MaskSet>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| Some(apply_masking(s, cfg.p_miss, derive_seed(&[cfg.seed, i as u64])).1))
        .collect();
    let refs: Vec<_> = samples.iter().collect();
    let mrefs: Vec<_> = masks.iter().map(Option::as_ref).collect();
    Ok(collate_masked(&refs, &mrefs, m.max_lens))
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Cmd => "cmd",
        Metric::Cosine => "cosine",
        Metric::Jsd => "jsd",
        Metric::SmoothL1 => "smooth_l1",
    }
}

/// Checks every scalar parameter of the tiny model under every configured metric.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.batch < 2 {
        return Err(Error::invalid("gradcheck", "batch must hold at least 2 samples"));
    }
    let batch = probe_batch(cfg)?;
    let plan = TrainPlan { alpha: cfg.alpha, beta: cfg.beta, ..TrainPlan::default() };
    let mut groups: Vec<GroupResult> = Vec::new();
    for &metric in &cfg.metrics {
        let hfr = HfrConfig { metric, ..HfrConfig::default() };
        let mut net = Network::<f64>::new(cfg.model.clone(), Some(hfr), cfg.seed)?;
        let mut sg = build_loss(&net, &plan, &batch)?;
        let grads = sg.g.backward(sg.loss)?;
        let analytic: Vec<Vec<f64>> = sg.p.vars().iter().map(|&v| grads.wrt(v)).collect();
        let loss_at = |net: &Network<f64>| -> Result<f64> { Ok(build_loss(net, &plan, &batch)?.parts.total) };
        for t in 0..net.store.len() {
            let id = net.store.id(t);
            let name = net.store.entries()[t].name.clone();
            let group = group_of(&name);
            let scale = match &cfg.fault {
                Some(f) if f.group == group => f.factor,
                _ => 1.0,
            };
            let gi = match groups.iter().position(|g| g.group == group) {
                Some(i) => i,
                None => {
                    groups.push(GroupResult {
                        group: group.clone(),
                        probes: 0,
                        max_rel_error: 0.0,
                        worst_param: name.clone(),
                        worst_index: 0,
                        worst_metric: metric_name(metric).into(),
                        analytic: 0.0,
                        numeric: 0.0,
                    });
                    groups.len() - 1
                }
            };
            for j in 0..net.store.get(id).numel() {
                let orig = net.store.get(id).values()[j];
                net.store.get_mut(id).values_mut()[j] = orig + cfg.step;
                let up = loss_at(&net)?;
                net.store.get_mut(id).values_mut()[j] = orig - cfg.step;
                let down = loss_at(&net)?;
                net.store.get_mut(id).values_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * cfg.step);
                let a = analytic[t][j] * scale;
                let err = relative_error(a, numeric, cfg.floor);
                let g = &mut groups[gi];
                g.probes += 1;
                if err > g.max_rel_error {
                    *g = GroupResult {
                        group: group.clone(),
                        probes: g.probes,
                        max_rel_error: err,
                        worst_param: name.clone(),
                        worst_index: j,
                        worst_metric: metric_name(metric).into(),
                        analytic: a,
                        numeric,
                    };
                }
            }
        }
    }
    Ok(GradcheckReport {
        groups,
        tolerance: cfg.tolerance,
    })
}
