use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::ndtensor::Tensor;

/// Linear warmup followed by step decay, evaluated per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    /// Epochs at which the rate is multiplied by `decay_rate`; strictly increasing.
    pub decay_epochs: Vec<usize>,
    pub decay_rate: f64,
    pub total_epochs: usize,
}

impl ScheduleSpec {
    /// No warmup, no decay.
    pub fn constant(base_lr: f64, total_epochs: usize) -> Self {
        ScheduleSpec {
            base_lr,
            warmup_epochs: 0,
            decay_epochs: Vec::new(),
            decay_rate: 1.0,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Validation(format!("base lr must be positive, got {}", self.base_lr)));
        }
        if self.total_epochs == 0 {
            return Err(Error::Validation("total epochs must be at least 1".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Validation(format!("decay rate must be in (0, 1], got {}", self.decay_rate)));
        }
        let mut prev = self.warmup_epochs;
        for &d in &self.decay_epochs {
            if d <= prev {
                return Err(Error::Validation(format!(
                    "decay epochs must be strictly increasing and after warmup ({} epochs): {:?}",
                    self.warmup_epochs, self.decay_epochs
                )));
            }
            prev = d;
        }
        Ok(())
    }
}

/// Learning rate for 1-indexed `epoch`.
///
/// During warmup the rate is `base·epoch/warmup`; afterwards it is `base`
/// divided by `(1/rate)^k`, where `k` counts decay epochs `≤ epoch`. Dividing
/// keeps decimal results such as `0.1 → 0.01 → 0.001` exact in f64.
pub fn lr_at_epoch(spec: &ScheduleSpec, epoch: usize) -> Result<f64> {
    spec.validate()?;
    if epoch == 0 || epoch > spec.total_epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside [1, {}]", spec.total_epochs)));
    }
    if epoch <= spec.warmup_epochs {
        // Clamped: `base·w/w` can round one ulp above `base`.
        return Ok((spec.base_lr * epoch as f64 / spec.warmup_epochs as f64).min(spec.base_lr));
    }
    let passed = spec.decay_epochs.iter().filter(|&&d| d <= epoch).count() as i32;
    Ok(spec.base_lr / (1.0 / spec.decay_rate).powi(passed))
}

/// SGD with momentum and L2 weight decay; velocities are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<f32>>,
}

impl OptimState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Validation(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Validation(format!("weight decay must be ≥ 0, got {weight_decay}")));
        }
        Ok(OptimState {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<f32>> {
        self.velocity.get(name)
    }
}

/// `v ← m·v + (g + wd·p)`, `p ← p − lr·v` for every non-frozen parameter in
/// `grads` (pairs of bundle parameter index and gradient). Nothing is updated
/// if any gradient is non-finite.
pub fn sgd_step(bundle: &mut ModelBundle, grads: &[(usize, Tensor<f32>)], state: &mut OptimState) -> Result<()> {
    if !(state.lr > 0.0 && state.lr.is_finite()) {
        return Err(Error::Validation(format!("learning rate must be positive, got {}", state.lr)));
    }
    for (idx, g) in grads {
        let p = bundle
            .params()
            .get(*idx)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter index {idx}")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("`{}` is {:?} but its gradient is {:?}", p.name, p.value.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { param: p.name.clone() });
        }
    }
    let (lr, m, wd) = (state.lr as f32, state.momentum as f32, state.weight_decay as f32);
    let frozen = bundle.frozen_groups().clone();
    for (idx, g) in grads {
        let param = &mut bundle.params_mut()[*idx];
        if frozen.contains(&param.group) {
            continue;
        }
        let v = state
            .velocity
            .entry(param.name.clone())
            .or_insert_with(|| Tensor::zeros(param.value.shape().to_vec()));
        for ((p, v), &g) in param.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = m * *v + (g + wd * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}
