// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::forward::Model;
use super::weights::Role;
use crate::error::Result;

pub const INIT_STD: f32 = 0.02;

/// Same architecture as `model` with fresh weights: matrices drawn from
/// N(0, 0.02²), biases and LayerNorm shifts zero, gains and gates one.
pub fn random_init_like(model: &Model, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    let mut weights = model.weights().clone();
    weights.for_each_mut(|_, role, t| match role {
        Role::Weight => t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng)),
        Role::Bias | Role::LnBeta | Role::GateAdd => t.data.fill(0.0),
        Role::LnGamma | Role::GateMul => t.data.fill(1.0),
    });
    Model::new(model.spec().clone(), weights)
}
