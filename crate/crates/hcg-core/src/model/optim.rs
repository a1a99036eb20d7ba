//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Adam moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn check(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0 && self.eps.is_finite())
        {
            return Err(ModelError::BadConfig(format!(
                "adam wants betas in [0, 1) and eps > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state over a fixed list of parameter tensors, addressed by
/// slot index. Weight decay is decoupled: it scales the parameter directly
/// and never enters the moments.
pub struct Optimizer {
    kind: OptimizerKind,
    adam: AdamParams,
    lr: f64,
    weight_decay: f64,
    step: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        adam: AdamParams,
        lr: f64,
        weight_decay: f64,
        slot_sizes: &[usize],
    ) -> Result<Self, ModelError> {
        adam.check()?;
        if !(lr.is_finite() && lr >= 0.0) || !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(ModelError::BadConfig(format!(
                "lr and weight_decay must be finite and >= 0, got {lr} and {weight_decay}"
            )));
        }
        Ok(Self {
            kind,
            adam,
            lr,
            weight_decay,
            step: 0,
            slots: slot_sizes
                .iter()
                .map(|&n| Slot {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        })
    }

    /// Applies one update across all slots; `params[i]` and `grads[i]` must
    /// match the slot size given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), ModelError> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "optimizer has {} slots, got {} params and {} grads",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        for ((slot, p), g) in self.slots.iter_mut().zip(params.iter_mut()).zip(grads) {
            if p.len() != slot.m.len() || g.len() != slot.m.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "slot holds {} values, got param {} and grad {}",
                    slot.m.len(),
                    p.len(),
                    g.len()
                )));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in p.iter_mut().zip(g.iter()) {
                        *w -= self.lr * (gi + self.weight_decay * *w);
                    }
                }
                OptimizerKind::Adam => {
                    let AdamParams { beta1, beta2, eps } = self.adam;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    for (((w, &gi), m), v) in p
                        .iter_mut()
                        .zip(g.iter())
                        .zip(slot.m.iter_mut())
                        .zip(slot.v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= self.lr * (m_hat / (v_hat.sqrt() + eps) + self.weight_decay * *w);
                    }
                }
            }
        }
        Ok(())
    }
}
