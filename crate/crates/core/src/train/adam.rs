use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moment buffers that persist across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        let ok = cfg.learning_rate > 0.0
            && (0.0..1.0).contains(&cfg.beta1)
            && (0.0..1.0).contains(&cfg.beta2)
            && cfg.eps > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam settings {cfg:?}")));
        }
        Ok(Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Applies one update from the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        if self.m.is_empty() {
            for (_, p) in store.iter() {
                let (r, c) = p.value.shape();
                self.m.push(Matrix::zeros(r, c));
                self.v.push(Matrix::zeros(r, c));
            }
        }
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument("parameter set changed between Adam steps".into()));
        }
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_slice();
            let w = p.value.as_mut_slice();
            for i in 0..g.len() {
                let mi = &mut m.as_mut_slice()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g[i];
                let vi = &mut v.as_mut_slice()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g[i] * g[i];
                w[i] -= learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
