//! Ordered store of named learnable tensors.
//!
//! Insertion order is the canonical order used by checkpoints, the optimizer
//! and the parameter counters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tensorlab::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

/// Graph handles for every parameter of a store, index-aligned.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
            }
        };
        let tensor = Tensor::new(shape.to_vec(), values)
            .expect("shape and values agree")
            .requires_grad();
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn id(&self, index: usize) -> ParamId {
        assert!(index < self.entries.len());
        ParamId(index)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Scalar count over entries whose name starts with any of `prefixes`.
    pub fn count_with_prefix(&self, prefixes: &[&str]) -> usize {
        self.entries
            .iter()
            .filter(|e| prefixes.iter().any(|p| e.name.starts_with(p)))
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| g.leaf(&e.tensor)).collect(),
        }
    }

    /// Flattened copy of every value in canonical order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .iter()
            .flat_map(|e| e.tensor.values().iter().copied())
            .collect()
    }

    /// Overwrites every value from a canonical-order buffer.
    pub fn assign(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.scalar_count());
        let mut at = 0;
        for e in &mut self.entries {
            let n = e.tensor.numel();
            e.tensor.values_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Gradient-check group of a parameter name: `mrau0.a.wq` → `mrau0.a`,
/// `cls.0.w` → `cls`, `align.w` → `align`.
pub fn group_of(name: &str) -> String {
    let mut parts = name.split('.');
    let head = parts.next().unwrap_or_default();
    match head {
        "cls" | "align" => head.to_string(),
        _ => match parts.next() {
            Some(m) => format!("{head}.{m}"),
            None => head.to_string(),
        },
    }
}
