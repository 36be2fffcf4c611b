//! AdaBelief optimizer: Adam-shaped, but the second moment tracks the
//! variance of the gradient around its running mean ("belief" in the
//! gradient direction) instead of the raw second moment. No bias
//! correction. Weight decay is decoupled and applied before the step.

use std::collections::BTreeMap;
use std::collections::HashMap;

use super::tensor::{Parameters, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-16;
pub const WEIGHT_DECAY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The whole step was dropped because a gradient held a NaN.
    SkippedNan,
}

#[derive(Default)]
pub struct AdaBelief {
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
    /// Applied update count; drives the learning-rate schedule.
    pub updates: u64,
}

impl AdaBelief {
    pub fn new() -> Self {
        AdaBelief::default()
    }

    /// Applies one update at learning rate `lr` to every tensor named in
    /// `grads`. A NaN anywhere in the gradients skips the entire step so a
    /// single bad rollout cannot poison the moment estimates.
    pub fn step(
        &mut self,
        params: &mut Parameters,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> StepOutcome {
        if grads.values().any(Tensor::has_nan) {
            return StepOutcome::SkippedNan;
        }
        for (name, g) in grads {
            let theta = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            assert!(theta.same_shape(g), "gradient shape mismatch for {name}");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for i in 0..g.data.len() {
                theta.data[i] *= 1.0 - lr * WEIGHT_DECAY;
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * g.data[i];
                let diff = g.data[i] - m.data[i];
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * diff * diff;
                theta.data[i] -= lr * m.data[i] / (v.data[i].sqrt() + EPSILON);
            }
        }
        self.updates += 1;
        StepOutcome::Applied
    }
}
