// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use super::archive::{NamedTensor, TensorData};
use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Dense f32 tensor, row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    #[inline]
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Element `(r, c)` of a 2-D tensor.
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }
}

/// What a tensor is for; drives initialisation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Weight,
    Bias,
    LnGamma,
    LnBeta,
    GateMul,
    GateAdd,
}

#[derive(Clone, PartialEq, Debug)]
pub struct LayerNormWeights {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormWeights {
    fn new(n: usize) -> Self {
        LayerNormWeights { gamma: Tensor::filled(&[n], 1.0), beta: Tensor::zeros(&[n]) }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn new(i: usize, o: usize) -> Self {
        Linear { weight: Tensor::zeros(&[i, o]), bias: Tensor::zeros(&[o]) }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct SmolgenWeights {
    pub compress: Tensor,
    pub dense1: Linear,
    pub ln1: LayerNormWeights,
    pub dense2: Linear,
    pub ln2: LayerNormWeights,
}

#[derive(Clone, PartialEq, Debug)]
pub struct LayerWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln1: LayerNormWeights,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub ln2: LayerNormWeights,
    pub smolgen: Option<SmolgenWeights>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Weights {
    pub embedding: Linear,
    pub gate_mul: Option<Tensor>,
    pub gate_add: Option<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub smolgen_global: Option<Tensor>,
    pub policy_embed: Linear,
    pub policy_source: Linear,
    pub policy_target: Linear,
    pub policy_promotion: Option<Tensor>,
    pub value_embed: Linear,
    pub value_dense1: Linear,
    pub value_dense2: Linear,
}

// One listing drives both the shared and the mutable visitor, so names and
// order cannot drift apart.
macro_rules! visit_tensors {
    ($w:expr, $f:ident, $iter:ident, $($m:tt)?) => {{
        macro_rules! lin {
            ($name:expr, $l:expr) => {{
                $f(&format!("{}.weight", $name), Role::Weight, & $($m)? $l.weight);
                $f(&format!("{}.bias", $name), Role::Bias, & $($m)? $l.bias);
            }};
        }
        macro_rules! ln {
            ($name:expr, $l:expr) => {{
                $f(&format!("{}.gamma", $name), Role::LnGamma, & $($m)? $l.gamma);
                $f(&format!("{}.beta", $name), Role::LnBeta, & $($m)? $l.beta);
            }};
        }
        lin!("embedding", $w.embedding);
        if let Some(t) = & $($m)? $w.gate_mul {
            $f("embedding.gate_mul", Role::GateMul, t);
        }
        if let Some(t) = & $($m)? $w.gate_add {
            $f("embedding.gate_add", Role::GateAdd, t);
        }
        for (i, layer) in $w.layers.$iter().enumerate() {
            let p = format!("layers.{i}");
            lin!(format!("{p}.attn.q"), layer.q);
            lin!(format!("{p}.attn.k"), layer.k);
            lin!(format!("{p}.attn.v"), layer.v);
            lin!(format!("{p}.attn.out"), layer.out);
            ln!(format!("{p}.ln1"), layer.ln1);
            lin!(format!("{p}.mlp.in"), layer.mlp_in);
            lin!(format!("{p}.mlp.out"), layer.mlp_out);
            ln!(format!("{p}.ln2"), layer.ln2);
            if let Some(s) = & $($m)? layer.smolgen {
                $f(&format!("{p}.smolgen.compress.weight"), Role::Weight, & $($m)? s.compress);
                lin!(format!("{p}.smolgen.dense1"), s.dense1);
                ln!(format!("{p}.smolgen.ln1"), s.ln1);
                lin!(format!("{p}.smolgen.dense2"), s.dense2);
                ln!(format!("{p}.smolgen.ln2"), s.ln2);
            }
        }
        if let Some(t) = & $($m)? $w.smolgen_global {
            $f("smolgen.global.weight", Role::Weight, t);
        }
        lin!("policy.embed", $w.policy_embed);
        lin!("policy.source", $w.policy_source);
        lin!("policy.target", $w.policy_target);
        if let Some(t) = & $($m)? $w.policy_promotion {
            $f("policy.promotion.weight", Role::Weight, t);
        }
        lin!("value.embed", $w.value_embed);
        lin!("value.dense1", $w.value_dense1);
        lin!("value.dense2", $w.value_dense2);
    }};
}

impl Weights {
    /// All-zero weights (LayerNorm gains and multiplicative gates at 1)
    /// with the shapes `spec` implies.
    pub fn zeros(spec: &ModelSpec) -> Weights {
        let d = spec.d_resid;
        let da = spec.d_attn();
        let layers = (0..spec.n_layers)
            .map(|_| LayerWeights {
                q: Linear::new(d, da),
                k: Linear::new(d, da),
                v: Linear::new(d, da),
                out: Linear::new(da, d),
                ln1: LayerNormWeights::new(d),
                mlp_in: Linear::new(d, spec.d_mlp),
                mlp_out: Linear::new(spec.d_mlp, d),
                ln2: LayerNormWeights::new(d),
                smolgen: spec.smolgen.map(|s| SmolgenWeights {
                    compress: Tensor::zeros(&[d, s.compress]),
                    dense1: Linear::new(64 * s.compress, s.hidden),
                    ln1: LayerNormWeights::new(s.hidden),
                    dense2: Linear::new(s.hidden, spec.n_heads * s.gen),
                    ln2: LayerNormWeights::new(spec.n_heads * s.gen),
                }),
            })
            .collect();
        Weights {
            embedding: Linear::new(spec.input_width(), d),
            gate_mul: spec.input_gating.then(|| Tensor::filled(&[64, d], 1.0)),
            gate_add: spec.input_gating.then(|| Tensor::zeros(&[64, d])),
            layers,
            smolgen_global: spec.smolgen.map(|s| Tensor::zeros(&[s.gen, 64 * 64])),
            policy_embed: Linear::new(d, spec.d_policy),
            policy_source: Linear::new(spec.d_policy, spec.d_policy),
            policy_target: Linear::new(spec.d_policy, spec.d_policy),
            policy_promotion: (spec.promotion_pieces > 0)
                .then(|| Tensor::zeros(&[spec.d_policy, spec.promotion_pieces])),
            value_embed: Linear::new(d, spec.value_embed),
            value_dense1: Linear::new(64 * spec.value_embed, spec.value_hidden),
            value_dense2: Linear::new(spec.value_hidden, 3),
        }
    }

    /// Visits every tensor in canonical order with its archive name.
    pub fn for_each(&self, mut f: impl FnMut(&str, Role, &Tensor)) {
        visit_tensors!(self, f, iter,);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, Role, &mut Tensor)) {
        visit_tensors!(self, f, iter_mut, mut);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, t| n += t.data.len());
        n
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.for_each(|name, _, t| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape.clone(),
                data: TensorData::F32(t.data.clone()),
            })
        });
        out
    }

    /// Fills weights for `spec` from archive tensors, checking that every
    /// expected tensor is present with the right shape and nothing is left over.
    pub fn from_named(spec: &ModelSpec, tensors: Vec<NamedTensor>) -> Result<Weights> {
        let mut by_name: BTreeMap<String, NamedTensor> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut w = Weights::zeros(spec);
        let mut err = None;
        w.for_each_mut(|name, _, t| {
            if err.is_some() {
                return;
            }
            match by_name.remove(name) {
                None => err = Some(Error::archive(name, "missing tensor")),
                Some(src) if src.shape != t.shape => {
                    err = Some(Error::archive(
                        name,
                        format!("shape {:?} does not match spec-implied {:?}", src.shape, t.shape),
                    ))
                }
                Some(src) => match src.data {
                    TensorData::F32(v) => t.data = v,
                    TensorData::F64(_) => err = Some(Error::archive(name, "expected f32 data")),
                },
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::archive(extra.clone(), "tensor not used by the model spec"));
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let w = Weights::zeros(&ModelSpec::synthetic());
        let mut names = Vec::new();
        w.for_each(|n, _, _| names.push(n.to_string()));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&"layers.2.smolgen.dense2.weight".to_string()));
    }

    #[test]
    fn named_round_trip() {
        let spec = ModelSpec::synthetic();
        let mut w = Weights::zeros(&spec);
        w.layers[1].q.weight.data[3] = 0.5;
        let back = Weights::from_named(&spec, w.to_named()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let spec = ModelSpec::synthetic();
        let mut named = Weights::zeros(&spec).to_named();
        let t = named.iter_mut().find(|t| t.name == "layers.0.attn.q.weight").unwrap();
        t.shape = vec![16, 8];
        t.data = TensorData::F32(vec![0.0; 128]);
        match Weights::from_named(&spec, named) {
            Err(Error::Archive { tensor: Some(n), .. }) => assert_eq!(n, "layers.0.attn.q.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
