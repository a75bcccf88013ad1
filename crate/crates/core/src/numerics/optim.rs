use indexmap::IndexMap;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{shape_of, NumericsError, ParamStore, Real};

/// Step learning-rate decay: `base_lr · gamma^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub period: u32,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            gamma: 0.5,
            period: 20,
        }
    }
}

impl StepSchedule {
    pub fn lr(&self, epoch: u32) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.period.max(1)) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Array2<T>, Array2<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter named in `grads`, using the
    /// schedule's learning rate for `epoch`.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &IndexMap<String, Array2<T>>,
        schedule: &StepSchedule,
        epoch: u32,
    ) -> Result<(), NumericsError> {
        for (name, g) in grads {
            let p = params
                .params
                .get(name)
                .ok_or(NumericsError::IndexOutOfRange {
                    op: "adam_step",
                    index: 0,
                    len: 0,
                })?;
            if p.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    left: shape_of(p),
                    right: shape_of(g),
                });
            }
        }
        self.step += 1;
        let lr = T::of(schedule.lr(epoch));
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let eps = T::of(self.config.eps);
        let bc1 = T::one() - T::of(self.config.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(self.config.beta2.powi(self.step as i32));
        for (name, g) in grads {
            let p = params.params.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Array2::zeros(p.raw_dim()), Array2::zeros(p.raw_dim())));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}
