//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moments aligned with the parameter store
/// plus the shared step counter used for bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        AdamState { cfg, t: 0, m, v }
    }

    /// One optimizer step over every parameter that has a gradient.
    ///
    /// Weight decay is decoupled: `p *= 1 - lr*wd` is applied before the
    /// Adam delta, so decay never enters the moment estimates. Gradients are
    /// consumed (cleared) by the step.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get_mut(id);
            let Some(grad) = p.grad().map(|g| g.to_vec()) else { continue };
            if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("adam step {} gradient of parameter {} (element {j})", self.t, id.0),
                });
            }
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                data[j] *= 1.0 - self.cfg.lr * self.cfg.weight_decay;
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[j] / b1t;
                let v_hat = v[j] / b2t;
                data[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            if let Some(j) = data.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("adam step {} parameter {} (element {j})", self.t, id.0),
                });
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. A second call on already-clipped gradients is
/// a no-op because the norm is then within bounds.
pub fn clip_grad_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        if let Some(g) = store.get(id).grad() {
            for v in g {
                sq += v * v;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(g) = store.get_mut(id).grad_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
    norm
}
