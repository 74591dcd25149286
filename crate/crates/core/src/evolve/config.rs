use serde::{Deserialize, Serialize};

use crate::error::{Result, UpoError};
use crate::objectives::NllSign;
use crate::uncertainty::{AlphaMode, WeightScope};

/// Hyperparameters of the self-evolution loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    pub beta: f64,
    pub lambda: f64,
    pub nll_eps: f64,
    pub nll_sign: NllSign,
    pub mu: f64,
    /// MC dropout passes `T`.
    pub mc_passes: usize,
    /// Responses sampled per prompt `N`.
    pub n_responses: usize,
    /// Number of self-evolution rounds `I`.
    pub iterations: usize,
    /// Pre-screen threshold; `None` means `ceil(N / 2)`, `Some(0)` keeps all pairs.
    pub top_k: Option<usize>,
    pub easy_fraction: f64,
    pub hard_fraction: f64,
    pub seed_mix: f64,
    pub prompts_per_iter: usize,
    pub policy_epochs: usize,
    pub reward_epochs: usize,
    pub estimator_epochs: usize,
    /// Epochs for the per-round reward/estimator refresh.
    pub retrain_epochs: usize,
    pub policy_lr: f64,
    pub reward_lr: f64,
    pub estimator_lr: f64,
    /// Learning rates shrink by this fraction of the base rate each round.
    pub lr_decay: f64,
    pub warmup_fraction: f64,
    /// Decoupled weight decay for the reward model and estimator.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_response_len: usize,
    pub dropout_rate: f64,
    pub alpha_mode: AlphaMode,
    pub weight_scope: WeightScope,
    pub update_rm_est: bool,
    /// `false` selects every candidate pair with zero smoothing weight.
    pub use_estimator: bool,
    /// `false` forces every smoothing weight to zero.
    pub use_alpha: bool,
    /// Scale of the initial policy head; small values give a near-uniform
    /// starting policy.
    pub sft_head_scale: f64,
    /// Demonstrations for the SFT policy; 0 keeps it at its initialization.
    pub sft_demos: usize,
    pub sft_epochs: usize,
    pub sft_lr: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lambda: 1.0,
            nll_eps: 1e-6,
            nll_sign: NllSign::Corrected,
            mu: 1.0,
            mc_passes: 10,
            n_responses: 4,
            iterations: 3,
            top_k: None,
            easy_fraction: 0.5,
            hard_fraction: 0.1,
            seed_mix: 0.4,
            prompts_per_iter: 250,
            policy_epochs: 3,
            reward_epochs: 3,
            estimator_epochs: 4,
            retrain_epochs: 2,
            policy_lr: 0.01,
            reward_lr: 0.01,
            estimator_lr: 0.01,
            lr_decay: 0.2,
            warmup_fraction: 0.1,
            weight_decay: 0.0,
            batch_size: 16,
            temperature: 0.8,
            top_p: 0.9,
            max_response_len: 8,
            dropout_rate: 0.1,
            alpha_mode: AlphaMode::Smoothing,
            weight_scope: WeightScope::Prompt,
            update_rm_est: true,
            use_estimator: true,
            use_alpha: true,
            sft_head_scale: 0.1,
            sft_demos: 2000,
            sft_epochs: 2,
            sft_lr: 0.01,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(UpoError::Config(msg));
        for (name, v) in [
            ("easy_fraction", self.easy_fraction),
            ("hard_fraction", self.hard_fraction),
            ("seed_mix", self.seed_mix),
            ("warmup_fraction", self.warmup_fraction),
            ("lr_decay", self.lr_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.easy_fraction + self.hard_fraction > 1.0 {
            return bad("easy_fraction + hard_fraction must not exceed 1".into());
        }
        if self.n_responses < 2 {
            return bad(format!("n_responses must be >= 2, got {}", self.n_responses));
        }
        if let Some(k) = self.top_k {
            if k >= self.n_responses {
                return bad(format!("top_k must be < n_responses, got {k}"));
            }
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if self.mc_passes < 2 {
            return bad(format!("mc_passes must be >= 2, got {}", self.mc_passes));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.lambda >= 0.0) || !(self.nll_eps > 0.0) {
            return bad("lambda must be >= 0 and nll_eps > 0".into());
        }
        if !(self.mu > 0.0) {
            return bad(format!("mu must be > 0, got {}", self.mu));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return bad(format!("dropout_rate must lie in (0, 1), got {}", self.dropout_rate));
        }
        if !(self.temperature > 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("temperature must be > 0 and top_p in (0, 1]".into());
        }
        for (name, v) in [
            ("policy_lr", self.policy_lr),
            ("reward_lr", self.reward_lr),
            ("estimator_lr", self.estimator_lr),
            ("sft_lr", self.sft_lr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.batch_size == 0 || self.prompts_per_iter == 0 || self.max_response_len == 0 {
            return bad("batch_size, prompts_per_iter and max_response_len must be >= 1".into());
        }
        if !(self.sft_head_scale >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("sft_head_scale and weight_decay must be >= 0".into());
        }
        Ok(())
    }

    /// Multiplier on the base learning rates for round `i` (1-based):
    /// 1.0, 0.8, 0.6, ... with the default decay, floored at one decay step.
    pub fn lr_factor(&self, iteration: usize) -> f64 {
        let steps = iteration.saturating_sub(1) as f64;
        (1.0 - self.lr_decay * steps).max(self.lr_decay).max(f64::MIN_POSITIVE)
    }

    /// Pre-screen threshold for `n` distinct responses.
    pub fn top_k_for(&self, n: usize) -> usize {
        match self.top_k {
            Some(0) => 0,
            Some(k) => k.min(n - 1),
            None => n.div_ceil(2).min(n - 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        IterationConfig::default().validate().unwrap();
    }

    #[test]
    fn lr_pattern() {
        let c = IterationConfig::default();
        let f: Vec<f64> = (1..=4).map(|i| c.lr_factor(i)).collect();
        for (a, b) in f.iter().zip([1.0, 0.8, 0.6, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c.lr_factor(9) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn top_k_defaults() {
        let c = IterationConfig::default();
        assert_eq!(c.top_k_for(6), 3);
        assert_eq!(c.top_k_for(4), 2);
        assert_eq!(c.top_k_for(3), 2);
        assert_eq!(c.top_k_for(2), 1);
        let all = IterationConfig { top_k: Some(0), ..c };
        assert_eq!(all.top_k_for(4), 0);
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            IterationConfig {
                easy_fraction: 1.2,
                ..Default::default()
            },
            IterationConfig {
                n_responses: 1,
                ..Default::default()
            },
            IterationConfig {
                mc_passes: 1,
                ..Default::default()
            },
            IterationConfig {
                top_k: Some(4),
                ..Default::default()
            },
            IterationConfig {
                beta: 0.0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<IterationConfig>(r#"{"beta": 0.2, "gamma": 1}"#);
        assert!(err.is_err());
        let c: IterationConfig = serde_json::from_str(r#"{"beta": 0.2}"#).unwrap();
        assert_eq!(c.beta, 0.2);
        assert_eq!(c.lambda, 1.0);
    }
}
