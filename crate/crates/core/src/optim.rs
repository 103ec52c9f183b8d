//! Adam optimizer with classic coupled (L2-into-gradient) weight decay.

use indexmap::IndexMap;

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: Elem,
    pub beta1: Elem,
    pub beta2: Elem,
    pub eps: Elem,
    pub weight_decay: Elem,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
pub struct AdamState {
    pub cfg: AdamConfig,
    t: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            t: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update over every trainable parameter.
    /// Weight decay enters as an L2 term added to the gradient before the
    /// moment update. Gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let t = self.t as Elem;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p
                .grad
                .as_mut()
                .unwrap_or_else(|| panic!("adam_step: missing gradient for parameter `{name}`"));
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape().to_vec()), Tensor::zeros(p.value.shape().to_vec())));
            let theta = p.value.data_mut();
            let g = grad.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..theta.len() {
                let gi = g[i] + c.weight_decay * theta[i];
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                theta[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            g.fill(0.0);
        }
    }
}
