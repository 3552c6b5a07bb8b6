use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::Params;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Decay the learning rate linearly to zero over the stage.
    pub linear_decay: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            linear_decay: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{n} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        Ok(())
    }

    /// Learning rate for 1-based step `t` of `total`.
    pub fn rate_at(&self, t: u64, total: u64) -> f64 {
        if self.linear_decay && total > 0 {
            self.learning_rate * (1.0 - (t - 1) as f64 / total as f64)
        } else {
            self.learning_rate
        }
    }
}

/// Adaptive-moment optimizer state keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Params,
    pub v: Params,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// One update of every parameter that has a gradient.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn update(
        &mut self,
        params: &mut Params,
        grads: &BTreeMap<String, Tensor>,
        cfg: &OptimConfig,
        lr: f64,
    ) -> Result<()> {
        self.update_groups(&mut [("", params, grads)], cfg, lr)
    }

    /// Like [`Adam::update`] for several parameter sets in one step. State is
    /// keyed by `prefix + name`.
    pub fn update_groups(
        &mut self,
        groups: &mut [(&str, &mut Params, &BTreeMap<String, Tensor>)],
        cfg: &OptimConfig,
        lr: f64,
    ) -> Result<()> {
        let t = self.step + 1;
        for (prefix, params, grads) in groups.iter() {
            for (name, g) in grads.iter() {
                let p = params
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("gradient for unknown parameter {prefix}{name}")))?;
                if p.shape() != g.shape() {
                    return Err(Error::shape(
                        "optimizer",
                        format!("{prefix}{name}: gradient {:?} vs {:?}", g.shape(), p.shape()),
                    ));
                }
                if !g.is_finite() {
                    return Err(Error::NanGradient {
                        name: format!("{prefix}{name}"),
                        step: t,
                    });
                }
            }
        }
        self.step = t;
        let c1 = 1.0 - cfg.beta1.powi(t as i32);
        let c2 = 1.0 - cfg.beta2.powi(t as i32);
        for (prefix, params, grads) in groups.iter_mut() {
            for (name, g) in grads.iter() {
                let key = format!("{prefix}{name}");
                let p = params.get_mut(name).expect("checked above");
                if !self.m.contains(&key) {
                    self.m.insert(key.clone(), Tensor::zeros(p.shape()));
                    self.v.insert(key.clone(), Tensor::zeros(p.shape()));
                }
                let m = self.m.get_mut(&key).expect("inserted").data_mut();
                let v = self.v.get_mut(&key).expect("inserted").data_mut();
                for (((th, &gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *th -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon) + lr * cfg.weight_decay * *th;
                }
            }
        }
        Ok(())
    }
}
