// SPDX-License-Identifier: MIT OR Apache-2.0

//! The square-per-token transformer: weights, a hookable forward pass and
//! the policy/value read-outs.

pub mod archive;
mod forward;
mod hooks;
mod init;
pub mod ops;
mod policy;
mod spec;
pub mod synthetic;
mod weights;

pub use forward::{ForwardOutput, ForwardTrace, Model, PolicyOutput, TraceLevel, ValueOutput};
pub use hooks::{ActivationSite, AttentionAblation, HookSet, Patch};
pub use init::random_init_like;
pub use policy::{policy_distribution, value_score, Evaluation, MoveDist, PolicyModel};
pub use spec::{Activation, Activations, ModelSpec, SmolgenSpec};
pub use weights::{LayerNormWeights, LayerWeights, Linear, Role, SmolgenWeights, Tensor, Weights};
