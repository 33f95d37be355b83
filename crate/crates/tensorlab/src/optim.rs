use crate::{Real, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
}

impl<T: Real> OptimState<T> {
    pub fn zeros(sizes: impl IntoIterator<Item = usize>) -> Self {
        let first_moment: Vec<Vec<T>> = sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self {
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
        }
    }
}

/// Adam with decoupled weight decay: the decay shrinks parameters
/// multiplicatively before the bias-corrected moment update.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub state: OptimState<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        Self {
            config,
            state: OptimState::zeros(sizes),
        }
    }

    /// One update over every parameter. Nothing is modified if any gradient
    /// is non-finite.
    pub fn step(&mut self, names: &[&str], params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        let n = self.state.first_moment.len();
        if params.len() != n || grads.len() != n || names.len() != n {
            return Err(TensorError::invalid(
                "adamw_step",
                format!("{n} states, {} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.state.first_moment[i].len() {
                return Err(TensorError::Dimension {
                    op: "adamw_step",
                    lhs: vec![p.len()],
                    rhs: vec![g.len()],
                });
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    name: names[i].to_string(),
                    index,
                });
            }
        }
        self.state.step_count += 1;
        let c = &self.config;
        let t = self.state.step_count as i32;
        let decay = T::lit(1.0 - c.lr * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.state.first_moment[i];
            let v = &mut self.state.second_moment[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
