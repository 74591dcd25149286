//! Minimal reverse-mode automatic differentiation over flat parameter vectors.
//!
//! A [`Graph`] is a topologically ordered list of primitive vector ops built
//! once per example. [`Graph::forward`] evaluates it against a
//! [`ParamVector`], optional real inputs and an optional [`MaskSet`] of frozen
//! dropout masks; [`Graph::backward`] returns the gradient of a scalar node
//! with respect to every parameter.

mod checkpoint;
mod dropout;
mod graph;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use dropout::{sample_dropout_masks, DropoutLayout, DropoutMask, MaskSet};
pub use graph::{grad_check, Graph, NodeId, Op, Values};
pub use optim::{opt_step, OptState, Schedule};
pub use params::{Layout, ParamVector, Segment};
