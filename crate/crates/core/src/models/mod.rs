//! The three learnable models: an autoregressive policy, a scalar reward
//! model and a binary pair estimator, all on one small pooled backbone.

mod backbone;
mod estimator;
mod policy;
mod reward;
mod sequence;
mod template;

pub use backbone::{BackboneDescriptor, ModelKind};
pub use estimator::EstimatorModel;
pub use policy::{PolicyModel, SamplingOptions};
pub use reward::RewardModel;
pub use sequence::{Role, Sequence, BOS, END, EOS, FIRST_CONTENT, SEP};
pub use template::{parse_template, render_template};
