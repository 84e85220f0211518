use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay. Moments are allocated lazily per
/// parameter and start at zero.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every non-frozen parameter that holds a gradient.
    /// `lr_scale(id)` multiplies `lr` per parameter (1.0 for a uniform rate).
    pub fn step_with(&mut self, store: &mut ParamStore, lr: f64, lr_scale: impl Fn(&str) -> f64) {
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let Some(grad) = p.tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let rate = lr * lr_scale(&p.name);
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                *w -= rate * (update + weight_decay * *w);
            }
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step_with(store, lr, |_| 1.0);
    }
}
