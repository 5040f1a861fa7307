//! Adam optimizer with L2 weight decay folded into the gradient.

use crate::params::ParamStore;
use crate::Result;
use indexmap::IndexMap;
use ndarray::ArrayD;

/// Adam with bias correction. Weight decay is added to the raw gradient
/// before the moment updates (classic L2 regularization, not decoupled).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: IndexMap<String, ArrayD<f64>>,
    v: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update for every named gradient. Optionally rescale the
    /// whole gradient set so its global L2 norm is at most `max_norm`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, ArrayD<f64>>,
        max_norm: Option<f64>,
    ) -> Result<()> {
        let scale = match max_norm {
            Some(cap) if cap > 0.0 => {
                let total: f64 = grads
                    .values()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum();
                let norm = total.sqrt();
                if norm > cap {
                    cap / norm
                } else {
                    1.0
                }
            }
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let param = store.get(name)?.as_ref().clone();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let mut new = param;
            for (((p, g0), mi), vi) in new
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g0 * scale + self.weight_decay * *p;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            store.set(name, new)?;
        }
        Ok(())
    }

    /// Moment arrays and step counter, for checkpointing.
    pub fn state(
        &self,
    ) -> (
        u64,
        &IndexMap<String, ArrayD<f64>>,
        &IndexMap<String, ArrayD<f64>>,
    ) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(
        &mut self,
        t: u64,
        m: IndexMap<String, ArrayD<f64>>,
        v: IndexMap<String, ArrayD<f64>>,
    ) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
