use rand::seq::SliceRandom;

use crate::autodiff::{opt_step, MaskSet, OptState, ParamVector};
use crate::error::{Result, UpoError};
use crate::models::{EstimatorModel, PolicyModel, RewardModel};
use crate::objectives::LossReport;
use crate::seed;

/// Models whose parameters a trainer can update.
pub trait Trainable {
    fn params_mut(&mut self) -> &mut ParamVector;
}

impl Trainable for PolicyModel {
    fn params_mut(&mut self) -> &mut ParamVector {
        PolicyModel::params_mut(self)
    }
}

impl Trainable for RewardModel {
    fn params_mut(&mut self) -> &mut ParamVector {
        RewardModel::params_mut(self)
    }
}

impl Trainable for EstimatorModel {
    fn params_mut(&mut self) -> &mut ParamVector {
        EstimatorModel::params_mut(self)
    }
}

/// Minibatch schedule for one training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainSpec {
    pub model: &'static str,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Context handed to the loss closure for each step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub epoch: usize,
    pub step: usize,
}

/// Shuffled minibatch Adam over `n` examples. Returns the loss of every step.
pub fn train<M, F>(model: &mut M, n: usize, spec: &TrainSpec, mut loss: F) -> Result<Vec<f64>>
where
    M: Trainable,
    F: FnMut(&M, &[usize], StepInfo) -> Result<LossReport>,
{
    if n == 0 || spec.epochs == 0 {
        return Ok(Vec::new());
    }
    let bs = spec.batch_size.max(1);
    let per_epoch = n.div_ceil(bs);
    let total = (per_epoch * spec.epochs) as u64;
    let mut opt = OptState::new(model.params_mut().len(), spec.lr, spec.warmup_fraction, total)
        .with_weight_decay(spec.weight_decay);
    let mut curve = Vec::with_capacity(total as usize);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..spec.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(spec.seed, "shuffle", &[epoch as u64]));
        for chunk in order.chunks(bs) {
            let diverged = UpoError::Diverged {
                model: spec.model,
                epoch,
                step,
            };
            let report = match loss(model, chunk, StepInfo { epoch, step }) {
                Ok(r) => r,
                Err(UpoError::NonFinite(_)) => return Err(diverged),
                Err(e) => return Err(e),
            };
            if !report.loss.is_finite() || !report.grad.is_finite() {
                return Err(diverged);
            }
            opt_step(model.params_mut(), &report.grad, &mut opt)?;
            if !model.params_mut().is_finite() {
                return Err(diverged);
            }
            curve.push(report.loss);
            step += 1;
        }
    }
    Ok(curve)
}

/// One frozen dropout mask set per example of a step.
pub fn step_masks(est: &EstimatorModel, rate: f64, seed: u64, step: usize, idx: &[usize]) -> Result<Vec<MaskSet>> {
    let layout = est.dropout_layout();
    idx.iter()
        .map(|&i| {
            MaskSet::sample(
                &layout,
                rate,
                seed::derive(seed, "train-mask", &[step as u64, i as u64]),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{label_seed_data, make_world};
    use crate::models::BackboneDescriptor;
    use crate::objectives::reward_loss;

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let desc = BackboneDescriptor::default();
        let mut rm = RewardModel::init(desc, 1).unwrap();
        let before = rm.clone();
        let spec = TrainSpec {
            model: "reward",
            epochs: 0,
            lr: 0.01,
            warmup_fraction: 0.1,
            batch_size: 4,
            weight_decay: 0.0,
            seed: 0,
        };
        let curve = train(&mut rm, 10, &spec, |_, _, _| unreachable!()).unwrap();
        assert!(curve.is_empty());
        assert_eq!(rm, before);
    }

    #[test]
    fn reward_training_lowers_loss() {
        let desc = BackboneDescriptor::default();
        let world = make_world(3, &desc).unwrap();
        let data = label_seed_data(&world, 64, 0.0, 1).unwrap();
        let mut rm = RewardModel::init(desc, 1).unwrap();
        let spec = TrainSpec {
            model: "reward",
            epochs: 5,
            lr: 0.01,
            warmup_fraction: 0.1,
            batch_size: 16,
            weight_decay: 0.0,
            seed: 0,
        };
        let start = reward_loss(&rm, &data).unwrap().loss;
        train(&mut rm, data.len(), &spec, |m, idx, _| {
            reward_loss(m, &data.select(idx)?)
        })
        .unwrap();
        assert!(reward_loss(&rm, &data).unwrap().loss < start);
    }

    #[test]
    fn non_finite_loss_reports_context() {
        let desc = BackboneDescriptor::default();
        let mut rm = RewardModel::init(desc, 1).unwrap();
        let spec = TrainSpec {
            model: "reward",
            epochs: 2,
            lr: 0.01,
            warmup_fraction: 0.0,
            batch_size: 5,
            weight_decay: 0.0,
            seed: 0,
        };
        let err = train(&mut rm, 10, &spec, |_, _, info| {
            if info.step == 3 {
                Err(UpoError::NonFinite("loss".into()))
            } else {
                let g = rm_zero_grad();
                Ok(g)
            }
        })
        .unwrap_err();
        assert!(matches!(
            err,
            UpoError::Diverged {
                model: "reward",
                epoch: 1,
                step: 3
            }
        ));
    }

    fn rm_zero_grad() -> LossReport {
        let layout = RewardModel::layout(&BackboneDescriptor::default());
        LossReport {
            loss: 0.5,
            margins: vec![],
            components: vec![],
            grad: ParamVector::zeros(layout),
        }
    }
}
