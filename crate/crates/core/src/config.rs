//! Run configuration: a TOML document with `[data]`, `[model]`, `[train]`
//! and `[eval]` sections. Every key except the seeds has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasim::GenConfig;
use crate::evalkit::SweepConfig;
use crate::mct::ModelConfig;
use crate::trainer::TrainPlan;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub eval: SweepConfig,
}

/// Keys that may appear although the default serializes without them.
const OPTIONAL_KEYS: [&str; 2] = ["model.ffn_hidden", "eval.max_lens"];

/// Seeds carry no default and must be written out.
const REQUIRED_KEYS: [&str; 3] = ["data.seed", "train.seed", "eval.mask_seeds"];

fn unknown_keys(doc: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in doc {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            Some(toml::Value::Table(kt)) => {
                if let toml::Value::Table(dt) = v {
                    unknown_keys(dt, kt, &path, out);
                }
            }
            Some(_) => {}
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => out.push(format!("unknown key {path}")),
        }
    }
}

fn has_key(doc: &toml::Table, path: &str) -> bool {
    let mut cur = doc;
    let mut parts = path.split('.').peekable();
    while let Some(p) = parts.next() {
        match cur.get(p) {
            Some(toml::Value::Table(t)) if parts.peek().is_some() => cur = t,
            Some(_) if parts.peek().is_none() => return true,
            _ => return false,
        }
    }
    false
}

impl RunConfig {
    /// Desk-scale preset for the synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            model: ModelConfig::benchmark(),
            train: TrainPlan {
                lr: 1e-3,
                ..TrainPlan::default()
            },
            ..Self::default()
        }
    }

    /// Every problem with the document: unknown keys, missing seeds, type
    /// errors and out-of-range values.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let known = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let mut errs = Vec::new();
        unknown_keys(&doc, &known, "", &mut errs);
        for key in REQUIRED_KEYS {
            if !has_key(&doc, key) {
                errs.push(format!("missing required key {key}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.data.validate();
        errs.extend(self.model.validate());
        errs.extend(self.train.validate());
        errs.extend(self.eval.validate());
        if self.data.classes != self.model.classes {
            errs.push(format!(
                "data.classes = {} but model.classes = {}",
                self.data.classes, self.model.classes
            ));
        }
        if self.data.dims != self.model.feature_dims {
            errs.push(format!(
                "data.dims = {:?} but model.feature_dims = {:?}",
                self.data.dims, self.model.feature_dims
            ));
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEEDS: &str = "[data]\nseed = 1\n[train]\nseed = 2\n[eval]\nmask_seeds = [0]\n";

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = RunConfig::parse(SEEDS).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.train.alpha, 0.4);
        assert_eq!(cfg.data.seed, 1);
    }

    #[test]
    fn reports_every_unknown_and_missing_key() {
        let text = "[data]\nbogus = 1\n[model]\nwidth = 3\n[extra]\n";
        match RunConfig::parse(text) {
            Err(Error::Config(errs)) => {
                assert_eq!(errs.len(), 6, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("data.bogus")));
                assert!(errs.iter().any(|e| e.contains("model.width")));
                assert!(errs.iter().any(|e| e.contains("train.seed")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_lists_all_problems() {
        let text = format!("{SEEDS}[model]\nheads = 3\nclasses = 5\n");
        match RunConfig::parse(&text) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2, "{errs:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialization_is_a_fixed_point() {
        for cfg in [RunConfig::default(), RunConfig::benchmark()] {
            let text = cfg.to_toml();
            let back = RunConfig::parse(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml(), text);
        }
    }
}
