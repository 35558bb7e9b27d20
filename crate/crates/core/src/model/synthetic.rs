// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-built toy transformer with a known causal story.
//!
//! One bit (is the carrier square occupied?) lives only at the carrier
//! square. A planted head copies it to the readout square, and the policy
//! head turns the copied bit into a large logit for the move
//! `source_a -> readout`. When the bit is off, `source_b -> target_b` wins.
//!
//! Features are written in pairs `(f, -f)` across the two halves of the
//! residual so every row has mean zero, and a large constant anchor keeps
//! LayerNorm close to the identity on the small features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::forward::Model;
use super::spec::{Activation, ModelSpec};
use super::weights::{Tensor, Weights};
use crate::chess::{reachability_mask, Board, Move, PieceKind, Square};
use crate::error::{Error, Result};

const ANCHOR: f32 = 100.0;

// Feature slots in the first half of the residual.
const F_ANCHOR: usize = 0;
const F_CARRY: usize = 1;
const F_COPY: usize = 2;
const F_IS_READOUT: usize = 3;
const F_SRC_A: usize = 4;
const F_SRC_B: usize = 5;
const F_TGT_B: usize = 6;

// Rows of the shared smolgen projection.
const ROW_SELF: usize = 0;
const ROW_PLANTED: usize = 1;
const ROW_KNIGHT: usize = 2;
const ROW_UNIFORM: usize = 3;

/// Where the planted structure lives. Layers and heads are 0-based.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PlantDescriptor {
    pub carrier: Square,
    pub readout: Square,
    /// Source of the move that wins when the carrier bit is on.
    pub source_a: Square,
    /// The fallback move `source_b -> target_b`.
    pub source_b: Square,
    pub target_b: Square,
    pub planted_layer: usize,
    pub planted_head: usize,
    /// A head whose pattern is the knight reachability mask.
    pub knight_layer: usize,
    pub knight_head: usize,
    /// A head with uniform attention, if any.
    pub uniform_head: Option<(usize, usize)>,
    /// Puzzle fixture matching the default squares.
    pub clean_fen: String,
    pub corrupted_fen: String,
    pub pv: Vec<Move>,
}

impl Default for PlantDescriptor {
    fn default() -> Self {
        let sq = |s: &str| s.parse::<Square>().unwrap();
        PlantDescriptor {
            carrier: sq("c6"),
            readout: sq("a4"),
            source_a: sq("a1"),
            source_b: sq("g1"),
            target_b: sq("h1"),
            planted_layer: 1,
            planted_head: 1,
            knight_layer: 0,
            knight_head: 2,
            uniform_head: Some((0, 3)),
            clean_fen: "7k/8/2p5/8/1N6/8/8/R5K1 w - - 0 1".into(),
            corrupted_fen: "7k/8/8/8/1N6/8/8/R5K1 w - - 0 1".into(),
            pv: ["a1a4", "h8g8", "b4c6", "g8f7"].iter().map(|m| m.parse().unwrap()).collect(),
        }
    }
}

impl PlantDescriptor {
    /// The move the plant favours when the carrier square is occupied.
    pub fn planted_move(&self) -> Move {
        Move::new(self.source_a, self.readout)
    }

    pub fn fallback_move(&self) -> Move {
        Move::new(self.source_b, self.target_b)
    }

    pub fn clean_board(&self) -> Result<Board> {
        Board::from_fen(&self.clean_fen)
    }

    pub fn corrupted_board(&self) -> Result<Board> {
        Board::from_fen(&self.corrupted_fen)
    }
}

fn check(spec: &ModelSpec, p: &PlantDescriptor) -> Result<()> {
    let fail = |m: &str| Err(Error::Plant(m.to_string()));
    spec.validate()?;
    if spec.d_resid < 16 || !spec.d_resid.is_multiple_of(2) {
        return fail("residual width must be even and at least 16");
    }
    if spec.n_layers < 2 || spec.n_layers > 4 || spec.d_resid > 64 {
        return fail("synthetic models need 2 to 4 layers and width at most 64");
    }
    let Some(sg) = spec.smolgen else {
        return fail("the plant drives attention through smolgen, which the model spec lacks");
    };
    if sg.gen < 4 {
        return fail("smolgen generator width must be at least 4");
    }
    if !spec.input_gating {
        return fail("input gating is needed to confine the carrier bit");
    }
    if spec.d_policy < 4 {
        return fail("policy width must be at least 4");
    }
    if spec.activations.embedding != Activation::Identity || spec.activations.policy != Activation::Relu {
        return fail("plant needs an identity embedding and a relu policy activation");
    }
    if p.planted_layer == 0 || p.planted_layer >= spec.n_layers {
        return fail("planted layer must be after the first layer and inside the model");
    }
    let mut heads = vec![(p.planted_layer, p.planted_head), (p.knight_layer, p.knight_head)];
    heads.extend(p.uniform_head);
    for (i, &(l, h)) in heads.iter().enumerate() {
        if l >= spec.n_layers || h >= spec.n_heads {
            return fail("designated head outside the model");
        }
        if heads[..i].contains(&(l, h)) {
            return fail("designated heads must be distinct");
        }
    }
    let squares = [p.carrier, p.readout, p.source_a, p.source_b, p.target_b];
    for (i, s) in squares.iter().enumerate() {
        if squares[..i].contains(s) {
            return fail("plant squares must be distinct");
        }
    }
    Ok(())
}

/// Builds the planted model. `seed` drives the irrelevant background weights.
pub fn build_synthetic_model(spec: &ModelSpec, plant: &PlantDescriptor, seed: u64) -> Result<Model> {
    check(spec, plant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |std: f32, t: &mut Tensor| {
        let n = Normal::new(0.0f32, std).unwrap();
        t.data.iter_mut().for_each(|v| *v = n.sample(&mut rng));
    };

    let d = spec.d_resid;
    let half = d / 2;
    let (h, dh) = (spec.n_heads, spec.d_head);
    let sg = spec.smolgen.unwrap();
    let mut w = Weights::zeros(spec);

    // Paired write helper: feature f gets +v in the first half, -v in the second.
    let pair = |t: &mut Tensor, row: usize, f: usize, v: f32| {
        t.set(row, f, v);
        t.set(row, f + half, -v);
    };

    // Embedding: the carry feature is 2*occupied - 1 on every square; the
    // gate keeps it only at the carrier. Everything else comes from gate_add.
    let n_piece = spec.layout.piece_planes.len();
    for p in 0..n_piece {
        pair(&mut w.embedding.weight, p, F_CARRY, 2.0);
    }
    w.embedding.bias.data[F_CARRY] = -1.0;
    w.embedding.bias.data[F_CARRY + half] = 1.0;
    let gate_mul = w.gate_mul.as_mut().unwrap();
    gate_mul.data.fill(0.0);
    gate_mul.set(plant.carrier.index(), F_CARRY, 1.0);
    gate_mul.set(plant.carrier.index(), F_CARRY + half, 1.0);
    let gate_add = w.gate_add.as_mut().unwrap();
    for q in 0..64 {
        pair(gate_add, q, F_ANCHOR, ANCHOR);
    }
    pair(gate_add, plant.readout.index(), F_IS_READOUT, 1.0);
    pair(gate_add, plant.source_a.index(), F_SRC_A, 1.0);
    pair(gate_add, plant.source_b.index(), F_SRC_B, 1.0);
    pair(gate_add, plant.target_b.index(), F_TGT_B, 1.0);

    // With the rows centred, this gain makes LayerNorm map the anchor back to
    // itself and leaves small features almost unscaled.
    let gamma = ANCHOR * (2.0 / d as f32).sqrt();
    let alpha = spec.residual_alpha;

    for (li, layer) in w.layers.iter_mut().enumerate() {
        layer.ln1.gamma.data.fill(gamma);
        layer.ln2.gamma.data.fill(gamma);
        gauss(0.001, &mut layer.q.weight);
        gauss(0.001, &mut layer.k.weight);
        gauss(0.5, &mut layer.v.weight);
        gauss(0.5, &mut layer.mlp_in.weight);
        gauss(0.5, &mut layer.mlp_in.bias);
        // out projection and FFN output stay zero: background heads and MLPs
        // cannot move the residual.

        let s = layer.smolgen.as_mut().unwrap();
        for head in 0..h {
            let row = if (li, head) == (plant.planted_layer, plant.planted_head) {
                ROW_PLANTED
            } else if (li, head) == (plant.knight_layer, plant.knight_head) {
                ROW_KNIGHT
            } else if plant.uniform_head == Some((li, head)) {
                ROW_UNIFORM
            } else {
                ROW_SELF
            };
            s.ln2.beta.data[head * sg.gen + row] = 1.0;
        }

        if li == plant.planted_layer {
            let hp = plant.planted_head;
            let col = hp * dh;
            for r in 0..d {
                for c in col..col + dh {
                    layer.q.weight.set(r, c, 0.0);
                    layer.k.weight.set(r, c, 0.0);
                    layer.v.weight.set(r, c, 0.0);
                }
            }
            // v[0] = carry feature
            layer.v.weight.set(F_CARRY, col, 0.5);
            layer.v.weight.set(F_CARRY + half, col, -0.5);
            // Scaling by alpha keeps the copied feature's size after the
            // post-LayerNorm residual sum.
            pair(&mut layer.out.weight, col, F_COPY, alpha);
        }
    }

    let global = w.smolgen_global.as_mut().unwrap();
    for q in 0..64 {
        global.set(ROW_SELF, q * 64 + q, 30.0);
        global.set(ROW_PLANTED, q * 64 + q, 20.0);
        for k in Square::all().filter(|k| reachability_mask(Square::from_index(q), PieceKind::Knight) & k.bit() != 0) {
            global.set(ROW_KNIGHT, q * 64 + k.index(), 30.0);
        }
    }
    global.set(ROW_PLANTED, plant.readout.index() * 64 + plant.carrier.index(), 40.0);

    // Policy: h0 = relu(2 copy + 2 is_readout - 3), h1..h3 pick out the
    // fixed squares; src0 = 10 h1, tgt0 = h0, src1 = 5 h2, tgt1 = h3.
    let pe = &mut w.policy_embed;
    pe.weight.set(F_COPY, 0, 1.0);
    pe.weight.set(F_COPY + half, 0, -1.0);
    pe.weight.set(F_IS_READOUT, 0, 1.0);
    pe.weight.set(F_IS_READOUT + half, 0, -1.0);
    pe.bias.data[0] = -3.0;
    for (col, f) in [(1, F_SRC_A), (2, F_SRC_B), (3, F_TGT_B)] {
        pe.weight.set(f, col, 0.5);
        pe.weight.set(f + half, col, -0.5);
    }
    let inv = 1.0 / spec.policy_scale;
    w.policy_source.weight.set(1, 0, 10.0 * inv);
    w.policy_target.weight.set(0, 0, 1.0);
    w.policy_source.weight.set(2, 1, 5.0 * inv);
    w.policy_target.weight.set(3, 1, 1.0);

    gauss(0.05, &mut w.value_embed.weight);
    gauss(0.1, &mut w.value_dense1.weight);
    gauss(0.1, &mut w.value_dense2.weight);

    Model::new(spec.clone(), w)
}

/// The default plant on the default small spec.
pub fn default_planted_model(seed: u64) -> Result<(Model, PlantDescriptor)> {
    let plant = PlantDescriptor::default();
    let model = build_synthetic_model(&ModelSpec::synthetic(), &plant, seed)?;
    Ok((model, plant))
}
