// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::archive::{self, NamedTensor};
use super::hooks::{ActivationSite, AttentionAblation, HookSet, Patch};
use super::ops::{all_finite, layernorm_rows, linear, matmul, softmax_in_place};
use super::spec::ModelSpec;
use super::weights::{LayerWeights, Weights};
use crate::chess::{encode_input, Board, InputPlanes};
use crate::error::{Error, Result};

/// How much of the forward pass to record beyond the requested reads.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    /// Outputs only.
    #[default]
    None,
    /// Plus the residual stream after every layer.
    Policy,
    /// Plus attention patterns, scores and head outputs.
    Full,
}

/// Recorded internals. Per-layer entries are `None` when not captured.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct ForwardTrace {
    /// 64×d after embedding and gating.
    pub embedding: Option<Vec<f32>>,
    /// 64×d after each layer's final LayerNorm.
    pub residual: Vec<Option<Vec<f32>>>,
    /// heads×64×64 post-softmax patterns (query-major).
    pub attn: Vec<Option<Vec<f32>>>,
    /// heads×64×64 scaled query·key scores.
    pub qk_scores: Vec<Option<Vec<f32>>>,
    /// heads×64×64 additive smolgen scores (zeros when the model has none).
    pub smolgen_scores: Vec<Option<Vec<f32>>>,
    /// heads×64×d_head outputs before the output projection.
    pub head_out: Vec<Option<Vec<f32>>>,
}

impl ForwardTrace {
    fn with_layers(n: usize) -> Self {
        ForwardTrace {
            embedding: None,
            residual: vec![None; n],
            attn: vec![None; n],
            qk_scores: vec![None; n],
            smolgen_scores: vec![None; n],
            head_out: vec![None; n],
        }
    }

    /// The recorded value at `site`, if that part of the trace was captured.
    pub fn site_value(&self, spec: &ModelSpec, site: &ActivationSite) -> Option<Vec<f32>> {
        match *site {
            ActivationSite::Residual { layer, square } => {
                let d = spec.d_resid;
                let r = self.residual.get(layer)?.as_ref()?;
                Some(r[square.index() * d..(square.index() + 1) * d].to_vec())
            }
            ActivationSite::HeadOutput { layer, head } => {
                let n = 64 * spec.d_head;
                let h = self.head_out.get(layer)?.as_ref()?;
                Some(h[head * n..(head + 1) * n].to_vec())
            }
            ActivationSite::AttnEntry { layer, head, query, key } => {
                let a = self.attn.get(layer)?.as_ref()?;
                Some(vec![a[head * 4096 + query.index() * 64 + key.index()]])
            }
        }
    }

    /// 64×64 slice of a heads×64×64 per-layer record.
    pub fn head_matrix(record: &[Option<Vec<f32>>], layer: usize, head: usize) -> Option<&[f32]> {
        record.get(layer)?.as_ref().map(|v| &v[head * 4096..(head + 1) * 4096])
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct PolicyOutput {
    /// 64×64 source-major logits in the player frame.
    pub logits: Vec<f32>,
    /// 64 targets × promotion pieces (q, r, b, n order), when the model has them.
    pub promotion: Option<Vec<f32>>,
    pub promotion_pieces: usize,
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ValueOutput {
    /// Win, draw, loss from the side to move's view.
    pub wdl: [f32; 3],
}

#[derive(Clone, PartialEq, Debug)]
pub struct ForwardOutput {
    pub policy: PolicyOutput,
    pub value: ValueOutput,
    pub trace: ForwardTrace,
}

/// Immutable weights plus spec. Cheap to share across threads.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    weights: Weights,
    fingerprint: String,
}

/// SHA-256 of the canonical blob the weights would be archived as.
fn weights_fingerprint(weights: &Weights) -> String {
    let mut hasher = Sha256::new();
    let mut len = 0usize;
    weights.for_each(|_, _, t| {
        let pad = (64 - len % 64) % 64;
        hasher.update(&[0u8; 64][..pad]);
        len += pad;
        for v in &t.data {
            hasher.update(v.to_le_bytes());
        }
        len += t.data.len() * 4;
    });
    hex::encode(hasher.finalize())
}

impl Model {
    pub fn new(spec: ModelSpec, weights: Weights) -> Result<Model> {
        spec.validate()?;
        let expected = Weights::zeros(&spec);
        let mut shapes = Vec::new();
        expected.for_each(|n, _, t| shapes.push((n.to_string(), t.shape.clone())));
        let mut i = 0;
        let mut err = None;
        weights.for_each(|n, _, t| {
            if err.is_none() {
                match shapes.get(i) {
                    Some((en, es)) if en == n && *es == t.shape && t.data.len() == es.iter().product::<usize>() => {}
                    _ => err = Some(Error::archive(n, "tensor shape does not match the model spec")),
                }
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != shapes.len() {
            return Err(Error::Spec("weights do not cover the model spec".into()));
        }
        let fingerprint = weights_fingerprint(&weights);
        Ok(Model { spec, weights, fingerprint })
    }

    /// Loads an archive directory (or its manifest path).
    pub fn load(path: &Path) -> Result<Model> {
        let (manifest, tensors) = archive::read_archive(path)?;
        let spec_value = manifest
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::archive_general("manifest meta has no model spec"))?;
        let spec: ModelSpec = serde_json::from_value(spec_value)
            .map_err(|e| Error::archive_general(format!("bad model spec: {e}")))?;
        spec.validate()?;
        let weights = Weights::from_named(&spec, tensors)?;
        let model = Model::new(spec, weights)?;
        log::info!(
            "loaded {} ({} parameters, {} layers)",
            path.display(),
            model.parameter_count(),
            model.spec.n_layers
        );
        Ok(model)
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        let named: Vec<NamedTensor> = self.weights.to_named();
        archive::write_archive(dir, serde_json::json!({ "model": self.spec }), &named)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.parameter_count()
    }

    pub fn encode(&self, board: &Board) -> InputPlanes {
        encode_input(board, &self.spec.layout)
    }

    /// Embedding plus input gating: the residual stream entering layer 0.
    pub fn embed(&self, planes: &InputPlanes) -> Result<Vec<f32>> {
        let width = self.spec.input_width();
        if planes.width() != width {
            return Err(Error::Layout(format!(
                "input has width {}, model expects {width}",
                planes.width()
            )));
        }
        let d = self.spec.d_resid;
        let w = &self.weights;
        let tokens = planes.token_matrix();
        let mut x = linear(&tokens, 64, &w.embedding.weight.data, &w.embedding.bias.data);
        self.spec.activations.embedding.apply_slice(&mut x);
        if let (Some(mul), Some(add)) = (&w.gate_mul, &w.gate_add) {
            for i in 0..64 * d {
                x[i] = x[i] * mul.data[i] + add.data[i];
            }
        }
        if !all_finite(&x) {
            return Err(Error::NumericFault { layer: 0, stage: "embedding" });
        }
        Ok(x)
    }

    pub fn forward(&self, planes: &InputPlanes, hooks: &HookSet, level: TraceLevel) -> Result<ForwardOutput> {
        hooks.validate(&self.spec)?;
        let x = self.embed(planes)?;
        let embedding = (level >= TraceLevel::Policy).then(|| x.clone());
        let mut out = self.run_layers(0, x, hooks, level)?;
        out.trace.embedding = embedding;
        Ok(out)
    }

    pub fn forward_board(&self, board: &Board, hooks: &HookSet, level: TraceLevel) -> Result<ForwardOutput> {
        self.forward(&self.encode(board), hooks, level)
    }

    /// Runs layers `start..` on `resid`, the 64×d stream entering layer
    /// `start` (the embedding for 0, else the residual after `start - 1`).
    /// Bit-identical to the matching part of a full forward pass.
    pub fn resume(&self, start: usize, resid: Vec<f32>, hooks: &HookSet, level: TraceLevel) -> Result<ForwardOutput> {
        hooks.validate(&self.spec)?;
        if start > self.spec.n_layers {
            return Err(Error::Hook(format!("cannot resume at layer {start}")));
        }
        if resid.len() != 64 * self.spec.d_resid {
            return Err(Error::Hook(format!("resume input has {} values", resid.len())));
        }
        if hooks.writes.keys().chain(hooks.reads.iter()).any(|s| s.layer() < start) {
            return Err(Error::Hook(format!("hook site precedes resume layer {}", start + 1)));
        }
        self.run_layers(start, resid, hooks, level)
    }

    fn run_layers(&self, start: usize, mut x: Vec<f32>, hooks: &HookSet, level: TraceLevel) -> Result<ForwardOutput> {
        let spec = &self.spec;
        let d = spec.d_resid;
        let mut trace = ForwardTrace::with_layers(spec.n_layers);
        for li in start..spec.n_layers {
            let want_attn = level == TraceLevel::Full
                || hooks.reads.iter().any(|s| s.layer() == li && !matches!(s, ActivationSite::Residual { .. }));
            let want_resid = level >= TraceLevel::Policy
                || hooks.reads.iter().any(|s| s.layer() == li && matches!(s, ActivationSite::Residual { .. }));
            x = self.layer(li, &x, hooks, want_attn, &mut trace)?;
            if hooks.has_writes_in(li) {
                for (site, patch) in &hooks.writes {
                    if let ActivationSite::Residual { layer, square } = *site {
                        if layer == li {
                            let row = &mut x[square.index() * d..(square.index() + 1) * d];
                            match patch {
                                Patch::Zero => row.fill(0.0),
                                Patch::Value(v) => row.copy_from_slice(v),
                            }
                        }
                    }
                }
            }
            if !all_finite(&x) {
                return Err(Error::NumericFault { layer: li + 1, stage: "residual" });
            }
            if want_resid {
                trace.residual[li] = Some(x.clone());
            }
        }
        let policy = self.policy_head(&x)?;
        let value = self.value_head(&x)?;
        Ok(ForwardOutput { policy, value, trace })
    }

    fn smolgen_scores(&self, lw: &LayerWeights, x: &[f32]) -> Vec<f32> {
        let spec = &self.spec;
        let h = spec.n_heads;
        let (Some(sg), Some(sw), Some(global)) = (spec.smolgen, &lw.smolgen, &self.weights.smolgen_global) else {
            return vec![0.0; h * 4096];
        };
        let act = spec.activations.smolgen;
        let compressed = matmul(x, 64, spec.d_resid, &sw.compress.data, sg.compress);
        let mut hidden = linear(&compressed, 1, &sw.dense1.weight.data, &sw.dense1.bias.data);
        act.apply_slice(&mut hidden);
        layernorm_rows(&mut hidden, sg.hidden, &sw.ln1.gamma.data, &sw.ln1.beta.data, spec.layernorm_eps);
        let mut gen = linear(&hidden, 1, &sw.dense2.weight.data, &sw.dense2.bias.data);
        act.apply_slice(&mut gen);
        layernorm_rows(&mut gen, h * sg.gen, &sw.ln2.gamma.data, &sw.ln2.beta.data, spec.layernorm_eps);
        // gen is heads × gen; each head's slice projects to a 64×64 score block.
        matmul(&gen, h, sg.gen, &global.data, 4096)
    }

    fn layer(
        &self,
        li: usize,
        x: &[f32],
        hooks: &HookSet,
        record: bool,
        trace: &mut ForwardTrace,
    ) -> Result<Vec<f32>> {
        let spec = &self.spec;
        let lw = &self.weights.layers[li];
        let (d, h, dh) = (spec.d_resid, spec.n_heads, spec.d_head);
        let da = h * dh;
        let q = linear(x, 64, &lw.q.weight.data, &lw.q.bias.data);
        let k = linear(x, 64, &lw.k.weight.data, &lw.k.bias.data);
        let v = linear(x, 64, &lw.v.weight.data, &lw.v.bias.data);
        let smol = self.smolgen_scores(lw, x);
        let scale = 1.0 / (dh as f32).sqrt();

        let mut qk = vec![0f32; h * 4096];
        for head in 0..h {
            for i in 0..64 {
                let qi = &q[i * da + head * dh..i * da + (head + 1) * dh];
                for j in 0..64 {
                    let kj = &k[j * da + head * dh..j * da + (head + 1) * dh];
                    let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    qk[head * 4096 + i * 64 + j] = dot * scale;
                }
            }
        }
        let mut attn: Vec<f32> = qk.iter().zip(&smol).map(|(a, b)| a + b).collect();

        let layer_writes: Vec<(&ActivationSite, &Patch)> =
            hooks.writes.iter().filter(|(s, _)| s.layer() == li).collect();
        if hooks.attention_ablation == AttentionAblation::PreSoftmaxMask {
            for (site, patch) in &layer_writes {
                if let (ActivationSite::AttnEntry { head, query, key, .. }, Patch::Zero) = (site, patch) {
                    attn[head * 4096 + query.index() * 64 + key.index()] = f32::NEG_INFINITY;
                }
            }
        }
        for row in attn.chunks_exact_mut(64) {
            softmax_in_place(row);
        }
        for (site, patch) in &layer_writes {
            if let ActivationSite::AttnEntry { head, query, key, .. } = site {
                let idx = head * 4096 + query.index() * 64 + key.index();
                match patch {
                    Patch::Zero => {
                        if hooks.attention_ablation == AttentionAblation::PostSoftmaxZero {
                            attn[idx] = 0.0;
                        }
                    }
                    Patch::Value(val) => attn[idx] = val[0],
                }
            }
        }

        // Per-head outputs, heads × 64 × dh.
        let mut head_out = vec![0f32; h * 64 * dh];
        for head in 0..h {
            for i in 0..64 {
                let out = &mut head_out[(head * 64 + i) * dh..(head * 64 + i + 1) * dh];
                let row = &attn[head * 4096 + i * 64..head * 4096 + (i + 1) * 64];
                for (j, &a) in row.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let vj = &v[j * da + head * dh..j * da + (head + 1) * dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += a * vv;
                    }
                }
            }
        }
        for (site, patch) in &layer_writes {
            if let ActivationSite::HeadOutput { head, .. } = site {
                let slot = &mut head_out[head * 64 * dh..(head + 1) * 64 * dh];
                match patch {
                    Patch::Zero => slot.fill(0.0),
                    Patch::Value(val) => slot.copy_from_slice(val),
                }
            }
        }

        let mut concat = vec![0f32; 64 * da];
        for head in 0..h {
            for i in 0..64 {
                concat[i * da + head * dh..i * da + (head + 1) * dh]
                    .copy_from_slice(&head_out[(head * 64 + i) * dh..(head * 64 + i + 1) * dh]);
            }
        }
        let attn_out = linear(&concat, 64, &lw.out.weight.data, &lw.out.bias.data);
        let alpha = spec.residual_alpha;
        let mut x1: Vec<f32> = x.iter().zip(&attn_out).map(|(a, b)| alpha * a + b).collect();
        layernorm_rows(&mut x1, d, &lw.ln1.gamma.data, &lw.ln1.beta.data, spec.layernorm_eps);
        if !all_finite(&x1) {
            return Err(Error::NumericFault { layer: li + 1, stage: "attention" });
        }

        let mut hidden = linear(&x1, 64, &lw.mlp_in.weight.data, &lw.mlp_in.bias.data);
        spec.activations.ffn.apply_slice(&mut hidden);
        let ffn = linear(&hidden, 64, &lw.mlp_out.weight.data, &lw.mlp_out.bias.data);
        let mut x2: Vec<f32> = x1.iter().zip(&ffn).map(|(a, b)| alpha * a + b).collect();
        layernorm_rows(&mut x2, d, &lw.ln2.gamma.data, &lw.ln2.beta.data, spec.layernorm_eps);

        if record {
            trace.qk_scores[li] = Some(qk);
            trace.smolgen_scores[li] = Some(smol);
            trace.attn[li] = Some(attn);
            trace.head_out[li] = Some(head_out);
        }
        Ok(x2)
    }

    fn policy_head(&self, x: &[f32]) -> Result<PolicyOutput> {
        let spec = &self.spec;
        let w = &self.weights;
        let dp = spec.d_policy;
        let mut pe = linear(x, 64, &w.policy_embed.weight.data, &w.policy_embed.bias.data);
        spec.activations.policy.apply_slice(&mut pe);
        let src = linear(&pe, 64, &w.policy_source.weight.data, &w.policy_source.bias.data);
        let tgt = linear(&pe, 64, &w.policy_target.weight.data, &w.policy_target.bias.data);
        let mut tgt_t = vec![0f32; dp * 64];
        for t in 0..64 {
            for c in 0..dp {
                tgt_t[c * 64 + t] = tgt[t * dp + c];
            }
        }
        let mut logits = matmul(&src, 64, dp, &tgt_t, 64);
        for l in &mut logits {
            *l *= spec.policy_scale;
        }
        let promotion = w
            .policy_promotion
            .as_ref()
            .map(|p| matmul(&tgt, 64, dp, &p.data, spec.promotion_pieces));
        if !all_finite(&logits) || !promotion.as_deref().is_none_or(all_finite) {
            return Err(Error::NumericFault { layer: spec.n_layers, stage: "policy" });
        }
        Ok(PolicyOutput { logits, promotion, promotion_pieces: spec.promotion_pieces })
    }

    fn value_head(&self, x: &[f32]) -> Result<ValueOutput> {
        let spec = &self.spec;
        let w = &self.weights;
        let act = spec.activations.value;
        let mut e = linear(x, 64, &w.value_embed.weight.data, &w.value_embed.bias.data);
        act.apply_slice(&mut e);
        let mut hdn = linear(&e, 1, &w.value_dense1.weight.data, &w.value_dense1.bias.data);
        act.apply_slice(&mut hdn);
        let mut logits = linear(&hdn, 1, &w.value_dense2.weight.data, &w.value_dense2.bias.data);
        softmax_in_place(&mut logits);
        if !all_finite(&logits) {
            return Err(Error::NumericFault { layer: spec.n_layers, stage: "value" });
        }
        Ok(ValueOutput { wdl: [logits[0], logits[1], logits[2]] })
    }
}
