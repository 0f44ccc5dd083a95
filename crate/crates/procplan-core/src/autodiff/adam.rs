//! Bias-corrected adaptive-moment optimizer.

use super::tensor::Params;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Optimizer state for one parameter store. Moment buffers are allocated to
/// match the store's shapes at construction and must not be reused across
/// stores.
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &Params) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam { cfg, t: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients stored in `params`. Tensors whose
    /// gradient contains a non-finite entry are skipped; the count of skipped
    /// tensors is returned.
    pub fn step(&mut self, params: &mut Params) -> usize {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let mut skipped = 0;

        for (slot, id) in params.ids().enumerate() {
            let has_bad = params
                .get(id)
                .grad
                .as_ref()
                .map(|g| g.iter().any(|x| !x.is_finite()))
                .unwrap_or(false);
            if has_bad {
                skipped += 1;
                log::warn!("adam: non-finite gradient for `{}`, skipping", params.name(id));
                continue;
            }
            let t = params.get_mut(id);
            let Some(grad) = t.grad.as_ref() else { continue };
            debug_assert_eq!(self.m[slot].len(), t.data.len(), "moment buffer shape mismatch");
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..t.data.len() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                t.data[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        skipped
    }
}
