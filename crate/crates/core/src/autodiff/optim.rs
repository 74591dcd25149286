use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Result, UpoError};

/// Learning-rate schedule after the warmup phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear decay from the base rate to zero at `total_steps`.
    #[default]
    Linear,
}

/// Adam moments plus a linear-warmup schedule and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptState {
    pub fn new(n_params: usize, lr: f64, warmup_fraction: f64, total_steps: u64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            warmup_fraction,
            total_steps,
            schedule: Schedule::Linear,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).ceil() as u64
    }

    /// Learning rate used by the next update.
    pub fn effective_lr(&self) -> f64 {
        let warmup = self.warmup_steps();
        let s = self.step;
        if s < warmup {
            return self.lr * (s + 1) as f64 / warmup as f64;
        }
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Linear => {
                let span = self.total_steps.saturating_sub(warmup);
                if span == 0 {
                    self.lr
                } else {
                    self.lr * self.total_steps.saturating_sub(s) as f64 / span as f64
                }
            }
        }
    }
}

/// One Adam update of `params` along `grads`.
pub fn opt_step(params: &mut ParamVector, grads: &ParamVector, state: &mut OptState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(UpoError::invalid(format!(
            "optimizer shapes disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(UpoError::NonFinite(format!("gradient component {i}")));
    }
    let lr = state.effective_lr();
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (p, &g)) in params.values_mut().iter_mut().zip(grads.values()).enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + state.eps) + state.weight_decay * *p);
    }
    Ok(())
}
