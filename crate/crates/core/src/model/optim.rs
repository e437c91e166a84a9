use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::forward::{loss_and_grad, LossReport};
use super::params::{Params, Role};
use super::real::Real;
use super::{ModelError, SeqTabModel, TaskWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to weight matrices only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &Params<T>) -> Self {
        Self { config, step: 0, m: Params::zeros_shaped_like(params), v: Params::zeros_shaped_like(params) }
    }

    /// One bias-corrected update from `grads`.
    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let bc1 = T::c(1.0 - c.beta1.powf(t));
        let bc2 = T::c(1.0 - c.beta2.powf(t));
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let (lr, eps, wd) = (T::c(c.lr), T::c(c.eps), T::c(c.weight_decay));
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for ((((_, role, p), (_, _, g)), (_, _, m)), (_, _, v)) in params.tensors_mut().into_iter().zip(g).zip(m).zip(v) {
            let decay = role == Role::Weight;
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                let mut delta = mhat / (vhat.sqrt() + eps);
                if decay {
                    delta += wd * p.data[i];
                }
                p.data[i] -= lr * delta;
            }
        }
    }

    /// Loss, gradient and one update on `batch`. Fails without touching the
    /// model when the loss or gradient is non-finite.
    pub fn step(
        &mut self,
        model: &mut SeqTabModel<T>,
        batch: &Batch,
        weights: &TaskWeights,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossReport, ModelError> {
        self.config.validate()?;
        let (report, grads) = loss_and_grad(model, batch, weights, rng, true)?;
        self.update(&mut model.params, &grads.expect("gradient requested"));
        if !model.params.all_finite() {
            return Err(ModelError::Divergence { task: "all".into(), what: "parameter".into() });
        }
        Ok(report)
    }
}
