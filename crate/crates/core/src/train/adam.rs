use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::numcore::{Gradients, Matrix, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm threshold applied before each update.
    pub clip: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer over a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Matrix>>,
    second: Vec<Option<Matrix>>,
}

/// Scales `grads` in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(Matrix::norm_sq).sum::<f64>());
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
    norm
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment accumulators for one parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Matrix, &Matrix)> {
        match (self.first.get(id.index()), self.second.get(id.index())) {
            (Some(Some(m)), Some(Some(v))) => Some((m, v)),
            _ => None,
        }
    }

    /// Restores state saved with [`Adam::steps`] and [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: Vec<Option<(Matrix, Matrix)>>) {
        self.step = step;
        self.first = moments.iter().map(|m| m.as_ref().map(|p| p.0.clone())).collect();
        self.second = moments.into_iter().map(|m| m.map(|p| p.1)).collect();
    }

    /// One update of every trainable parameter. Parameters without a
    /// gradient entry are treated as having zero gradient. Non-finite
    /// gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let ids: Vec<ParamId> = params.ids().filter(|&id| params.is_trainable(id)).collect();
        let mut gs: Vec<Matrix> = Vec::with_capacity(ids.len());
        for &id in &ids {
            let g = match grads.get(id) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = params.get(id).shape();
                    Matrix::zeros(r, c)
                }
            };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of parameter {}", params.name(id)),
                });
            }
            gs.push(g);
        }
        if let Some(c) = self.config.clip {
            clip_global_norm(&mut gs, c);
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - math::pow(beta1, self.step as f64);
        let bc2 = 1.0 - math::pow(beta2, self.step as f64);
        for (&id, g) in ids.iter().zip(&gs) {
            let (r, c) = g.shape();
            let m = self.first[id.index()].get_or_insert_with(|| Matrix::zeros(r, c));
            let v = self.second[id.index()].get_or_insert_with(|| Matrix::zeros(r, c));
            let p = params.get_mut(id);
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
            for i in 0..g.data().len() {
                let gi = g.data()[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                pd[i] -= lr * mh / (math::sqrt(vh) + eps);
            }
        }
        Ok(())
    }
}
