//! Uncertainty-enhanced iterative preference optimization at desk scale.
//!
//! A toy autoregressive policy is aligned over several self-training rounds.
//! Each round it samples responses, a reward model ranks them into preference
//! pairs, and an MC-dropout estimator scores how reliable each pair is. The
//! reliability scores drive which pairs are trained on and how strongly the
//! preference loss is smoothed toward the reversed pair. A synthetic world with
//! a hidden utility provides ground-truth labels for measuring noise and win
//! rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod evolve;
pub mod experiment;
pub mod models;
pub mod objectives;
pub mod seed;
pub mod uncertainty;

pub use error::{Result, UpoError};
