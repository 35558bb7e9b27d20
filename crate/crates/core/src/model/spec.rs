// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::chess::LayoutDescriptor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    SqrRelu,
    Mish,
    Swish,
    Selu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::SqrRelu => {
                let r = x.max(0.0);
                r * r
            }
            Activation::Mish => {
                let sp = if x > 20.0 { x } else { x.exp().ln_1p() };
                x * sp.tanh()
            }
            Activation::Swish => x / (1.0 + (-x).exp()),
            Activation::Selu => {
                const ALPHA: f32 = 1.673_263_2;
                const SCALE: f32 = 1.050_701;
                if x > 0.0 {
                    SCALE * x
                } else {
                    SCALE * ALPHA * x.exp_m1()
                }
            }
        }
    }

    pub fn apply_slice(self, xs: &mut [f32]) {
        if self != Activation::Identity {
            for x in xs {
                *x = self.apply(*x);
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Activations {
    pub embedding: Activation,
    pub ffn: Activation,
    pub smolgen: Activation,
    pub policy: Activation,
    pub value: Activation,
}

impl Default for Activations {
    fn default() -> Self {
        Activations {
            embedding: Activation::Mish,
            ffn: Activation::Mish,
            smolgen: Activation::Swish,
            policy: Activation::Selu,
            value: Activation::Mish,
        }
    }
}

/// Sub-shapes of the attention-score generator.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct SmolgenSpec {
    /// Per-square compression width.
    pub compress: usize,
    pub hidden: usize,
    /// Per-head generator width fed to the shared 64×64 projection.
    pub gen: usize,
}

/// Model hyperparameters, read from the archive manifest.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_resid: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    #[serde(default = "default_squares")]
    pub n_squares: usize,
    pub d_policy: usize,
    pub value_embed: usize,
    pub value_hidden: usize,
    pub smolgen: Option<SmolgenSpec>,
    /// 0: queen promotions reuse the base logit and under-promotions are
    /// masked; 1: one learned offset for queen; 4: offsets for q, r, b, n.
    #[serde(default)]
    pub promotion_pieces: usize,
    #[serde(default)]
    pub input_gating: bool,
    #[serde(default)]
    pub activations: Activations,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f32,
    /// Residual scaling inside each post-LayerNorm block.
    #[serde(default = "one")]
    pub residual_alpha: f32,
    /// Multiplier on source·target policy logits.
    #[serde(default = "one")]
    pub policy_scale: f32,
    #[serde(default)]
    pub layout: LayoutDescriptor,
}

fn default_squares() -> usize {
    64
}
fn default_eps() -> f32 {
    1e-6
}
fn one() -> f32 {
    1.0
}

impl ModelSpec {
    /// The full-size configuration (15 layers, width 768, 24 heads of 32).
    pub fn full_size() -> ModelSpec {
        ModelSpec {
            n_layers: 15,
            d_resid: 768,
            n_heads: 24,
            d_head: 32,
            d_mlp: 1024,
            n_squares: 64,
            d_policy: 768,
            value_embed: 32,
            value_hidden: 128,
            smolgen: Some(SmolgenSpec { compress: 32, hidden: 256, gen: 256 }),
            promotion_pieces: 4,
            input_gating: true,
            activations: Activations::default(),
            layernorm_eps: 1e-6,
            residual_alpha: (2.0f32 * 15.0).powf(0.25),
            policy_scale: 1.0 / (768f32).sqrt(),
            layout: LayoutDescriptor::default(),
        }
    }

    /// Small configuration used for synthetic fixtures.
    pub fn synthetic() -> ModelSpec {
        ModelSpec {
            n_layers: 3,
            d_resid: 16,
            n_heads: 4,
            d_head: 4,
            d_mlp: 8,
            n_squares: 64,
            d_policy: 4,
            value_embed: 2,
            value_hidden: 8,
            smolgen: Some(SmolgenSpec { compress: 1, hidden: 4, gen: 4 }),
            promotion_pieces: 0,
            input_gating: true,
            activations: Activations {
                embedding: Activation::Identity,
                ffn: Activation::Relu,
                smolgen: Activation::Relu,
                policy: Activation::Relu,
                value: Activation::Relu,
            },
            layernorm_eps: 1e-6,
            residual_alpha: 1.0,
            policy_scale: 1.0,
            layout: LayoutDescriptor::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_resid", self.d_resid),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("d_policy", self.d_policy),
            ("value_embed", self.value_embed),
            ("value_hidden", self.value_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Spec(format!("{name} must be at least 1")));
            }
        }
        if self.n_squares != 64 {
            return Err(Error::Spec(format!("n_squares must be 64, got {}", self.n_squares)));
        }
        if let Some(s) = self.smolgen {
            if s.compress == 0 || s.hidden == 0 || s.gen == 0 {
                return Err(Error::Spec("smolgen dimensions must be at least 1".into()));
            }
        }
        if ![0, 1, 4].contains(&self.promotion_pieces) {
            return Err(Error::Spec(format!(
                "promotion_pieces must be 0, 1 or 4, got {}",
                self.promotion_pieces
            )));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(Error::Spec("layernorm_eps must be positive".into()));
        }
        self.layout.validate()
    }

    pub fn d_attn(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn input_width(&self) -> usize {
        self.layout.input_width()
    }

    /// Post-softmax attention entries across all layers and heads.
    pub fn attention_entry_count(&self) -> usize {
        self.n_layers * self.n_heads * self.n_squares * self.n_squares
    }

    pub fn residual_site_count(&self) -> usize {
        self.n_layers * self.n_squares
    }

    pub fn head_site_count(&self) -> usize {
        self.n_layers * self.n_heads
    }
}
