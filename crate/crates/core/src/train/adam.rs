use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// State sized for every trainable parameter of `store`, in store order.
    pub fn for_store(config: AdamConfig, store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store.trainable_ids().iter().map(|&id| store.value(id).numel()).collect();
        Self::new(config, &sizes)
    }

    /// One update of every tensor in `params` from `grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params, {} grads, {} states", params.len(), grads.len(), self.m.len()),
            ));
        }
        for i in 0..params.len() {
            if params[i].len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(Error::shape("adam_step", format!("tensor {i} size differs from its state")));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Update the trainable parameters of `store`; `grads` in store order.
    pub fn step_store(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable_ids();
        let mut values: Vec<Vec<f64>> = ids.iter().map(|&id| store.value(id).data().to_vec()).collect();
        {
            let mut refs: Vec<&mut [f64]> = values.iter_mut().map(|v| v.as_mut_slice()).collect();
            self.step(&mut refs, grads)?;
        }
        for (id, v) in ids.into_iter().zip(values) {
            store.value_mut(id).data_mut().copy_from_slice(&v);
        }
        Ok(())
    }
}
