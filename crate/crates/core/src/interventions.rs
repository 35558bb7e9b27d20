// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal experiments: residual and head patching sweeps, attention-entry
//! ablations and piece-head ablations, all scored by the change in log odds
//! of the best move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chess::{Board, Move, PieceKind, Square};
use crate::error::{Error, Result};
use crate::heads::HeadTag;
use crate::model::{
    policy_distribution, ActivationSite, AttentionAblation, ForwardOutput, ForwardTrace, HookSet, Model, Patch,
    TraceLevel,
};
use crate::puzzles::PuzzleRecord;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking log odds.
pub const PROB_FLOOR: f64 = 1e-9;

/// Natural-log odds with clamping.
pub fn log_odds(p: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (p / (1.0 - p)).ln()
}

fn is_clamped(p: f64) -> bool {
    !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p)
}

/// Change in the best move's log odds under one intervention.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Effect {
    /// `log_odds(clean_prob) - log_odds(patched_prob)`; positive means the
    /// intervention hurt the best move.
    pub delta: f64,
    pub clean_prob: f64,
    pub patched_prob: f64,
    /// Either probability hit the clamp.
    pub clamped: bool,
}

impl Effect {
    pub fn new(clean_prob: f64, patched_prob: f64) -> Effect {
        Effect {
            delta: log_odds(clean_prob) - log_odds(patched_prob),
            clean_prob,
            patched_prob,
            clamped: is_clamped(clean_prob) || is_clamped(patched_prob),
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EffectRecord {
    pub puzzle_id: String,
    pub site: ActivationSite,
    #[serde(flatten)]
    pub effect: Effect,
}

/// A head, stored 0-based, printed and serialised 1-based as `L12H12`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

impl std::fmt::Display for HeadRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer + 1, self.head + 1)
    }
}

impl std::str::FromStr for HeadRef {
    type Err = Error;
    fn from_str(s: &str) -> Result<HeadRef> {
        match s.parse::<ActivationSite>() {
            Ok(ActivationSite::HeadOutput { layer, head }) => Ok(HeadRef { layer, head }),
            _ => Err(Error::Site(format!("expected a head like L12H12, got {s:?}"))),
        }
    }
}

impl Serialize for HeadRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Probability of `best` under a forward output on `board`.
fn prob_of(out: &ForwardOutput, board: &Board, best: Move) -> Result<f64> {
    Ok(policy_distribution(&out.policy, board)?.prob(best))
}

/// Clean and corrupted forward passes for one puzzle, reused by every site.
pub struct PatchContext<'m> {
    pub model: &'m Model,
    pub puzzle_id: String,
    pub clean: Board,
    pub best: Move,
    pub clean_prob: f64,
    clean_trace: ForwardTrace,
    corrupted_trace: ForwardTrace,
}

impl<'m> PatchContext<'m> {
    pub fn new(model: &'m Model, puzzle_id: &str, clean: &Board, corrupted: &Board, best: Move) -> Result<Self> {
        if !clean.is_legal_move(best) {
            return Err(Error::IllegalMove { uci: best.uci(), fen: clean.fen() });
        }
        let c = model.forward_board(clean, &HookSet::new(), TraceLevel::Full)?;
        let k = model.forward_board(corrupted, &HookSet::new(), TraceLevel::Full)?;
        Ok(PatchContext {
            model,
            puzzle_id: puzzle_id.to_string(),
            clean: clean.clone(),
            best,
            clean_prob: prob_of(&c, clean, best)?,
            clean_trace: c.trace,
            corrupted_trace: k.trace,
        })
    }

    /// Clean residual entering `layer`.
    fn input_to(&self, layer: usize) -> Vec<f32> {
        if layer == 0 {
            self.clean_trace.embedding.clone().expect("embedding traced")
        } else {
            self.clean_trace.residual[layer - 1].clone().expect("residual traced")
        }
    }

    fn record(&self, site: ActivationSite, out: &ForwardOutput) -> Result<EffectRecord> {
        let patched = prob_of(out, &self.clean, self.best)?;
        Ok(EffectRecord { puzzle_id: self.puzzle_id.clone(), site, effect: Effect::new(self.clean_prob, patched) })
    }

    /// Patches the corrupted residual at one (layer, square) into the clean run.
    pub fn patch_residual(&self, layer: usize, square: Square) -> Result<EffectRecord> {
        ActivationSite::Residual { layer, square }.validate(self.model.spec())?;
        let d = self.model.spec().d_resid;
        let mut x = self.clean_trace.residual[layer].clone().expect("residual traced");
        let src = self.corrupted_trace.residual[layer].as_ref().expect("residual traced");
        let r = square.index() * d..(square.index() + 1) * d;
        x[r.clone()].copy_from_slice(&src[r]);
        // Replacing the row after layer `layer` and running the rest is the
        // same computation as a residual write hook at that site.
        let out = self.model.resume(layer + 1, x, &HookSet::new(), TraceLevel::None)?;
        self.record(ActivationSite::Residual { layer, square }, &out)
    }

    /// Patches one head's corrupted output (all 64 squares) into the clean run.
    pub fn patch_head(&self, layer: usize, head: usize) -> Result<EffectRecord> {
        let site = ActivationSite::HeadOutput { layer, head };
        site.validate(self.model.spec())?;
        let value = self.corrupted_trace.site_value(self.model.spec(), &site).expect("head outputs traced");
        let mut hooks = HookSet::new();
        hooks.write(site, Patch::Value(value))?;
        let out = self.model.resume(layer, self.input_to(layer), &hooks, TraceLevel::None)?;
        self.record(site, &out)
    }
}

/// Role of a square in a residual sweep, in the clean board's model frame.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareClass {
    Corrupted,
    T1,
    T3,
    Other,
}

impl SquareClass {
    pub const ALL: [SquareClass; 4] = [SquareClass::Corrupted, SquareClass::T1, SquareClass::T3, SquareClass::Other];

    pub fn name(self) -> &'static str {
        match self {
            SquareClass::Corrupted => "corrupted",
            SquareClass::T1 => "t1",
            SquareClass::T3 => "t3",
            SquareClass::Other => "other",
        }
    }
}

/// Assigns every model-frame square a class. Corrupted wins over t1, t1 over t3.
pub fn classify_squares(corrupted: &[Square], t1: Option<Square>, t3: Option<Square>) -> [SquareClass; 64] {
    let mut out = [SquareClass::Other; 64];
    for (i, c) in out.iter_mut().enumerate() {
        let sq = Square::from_index(i);
        *c = if corrupted.contains(&sq) {
            SquareClass::Corrupted
        } else if Some(sq) == t1 {
            SquareClass::T1
        } else if Some(sq) == t3 {
            SquareClass::T3
        } else {
            SquareClass::Other
        };
    }
    out
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ResidualSweep {
    pub puzzle_id: String,
    pub n_layers: usize,
    /// Layer-major, 64 per layer.
    pub records: Vec<EffectRecord>,
    pub classes: Vec<SquareClass>,
}

impl ResidualSweep {
    pub fn delta(&self, layer: usize, square: Square) -> f64 {
        self.records[layer * 64 + square.index()].effect.delta
    }

    /// Mean delta over squares of `class` at `layer`, if any square has it.
    pub fn class_mean(&self, layer: usize, class: SquareClass) -> Option<f64> {
        let v: Vec<f64> = (0..64).filter(|&q| self.classes[q] == class).map(|q| self.records[layer * 64 + q].effect.delta).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Largest delta over the "other" squares at `layer`.
    pub fn max_other(&self, layer: usize) -> Option<f64> {
        (0..64)
            .filter(|&q| self.classes[q] == SquareClass::Other)
            .map(|q| self.records[layer * 64 + q].effect.delta)
            .reduce(f64::max)
    }
}

/// Every (layer, square) residual patch from `corrupted` into `clean`.
pub fn residual_sweep(ctx: &PatchContext, classes: [SquareClass; 64]) -> Result<ResidualSweep> {
    let n = ctx.model.spec().n_layers;
    let records = (0..n * 64)
        .into_par_iter()
        .map(|i| ctx.patch_residual(i / 64, Square::from_index(i % 64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualSweep { puzzle_id: ctx.puzzle_id.clone(), n_layers: n, records, classes: classes.to_vec() })
}

/// Every (layer, head) output patch, layer-major.
pub fn head_sweep(ctx: &PatchContext) -> Result<Vec<EffectRecord>> {
    let spec = ctx.model.spec();
    let h = spec.n_heads;
    (0..spec.n_layers * h).into_par_iter().map(|i| ctx.patch_head(i / h, i % h)).collect()
}

/// An attention entry, 0-based, squares in the model frame.
pub type Entry = (usize, usize, Square, Square);

/// Zeroes all listed post-softmax entries in one forward pass.
pub fn ablate_attention_entries(model: &Model, board: &Board, entries: &[Entry], best: Move) -> Result<Effect> {
    ablate_with(model, board, entries, best, AttentionAblation::PostSoftmaxZero)
}

pub fn ablate_with(model: &Model, board: &Board, entries: &[Entry], best: Move, mode: AttentionAblation) -> Result<Effect> {
    if !board.is_legal_move(best) {
        return Err(Error::IllegalMove { uci: best.uci(), fen: board.fen() });
    }
    let clean = model.forward_board(board, &HookSet::new(), TraceLevel::None)?;
    let mut hooks = HookSet::new().with_ablation(mode);
    for &(layer, head, query, key) in entries {
        let site = ActivationSite::AttnEntry { layer, head, query, key };
        if !hooks.writes.contains_key(&site) {
            hooks.zero(site)?;
        }
    }
    let out = model.forward_board(board, &hooks, TraceLevel::None)?;
    Ok(Effect::new(prob_of(&clean, board, best)?, prob_of(&out, board, best)?))
}

/// Which way round the (t1, t3) entry is read.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EntryOrientation {
    /// Query at the first move's target, key at the third's.
    #[default]
    QueryT1,
    /// The transpose.
    QueryT3,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EntryExperiment {
    pub puzzle_id: String,
    pub head: HeadRef,
    pub query: Square,
    pub key: Square,
    pub single: Effect,
    pub complement: Effect,
    /// The entry's pre-softmax score is strictly above the other 4095.
    pub entry_is_global_max: bool,
}

/// Strict-maximum test on a 64×64 score block.
pub fn is_strict_max(scores: &[f32], idx: usize) -> bool {
    let v = scores[idx];
    scores.iter().enumerate().all(|(i, &s)| i == idx || s < v)
}

/// Single-entry and complement ablation of `head` at (t1, t3).
pub fn entry_experiment(model: &Model, puzzle: &PuzzleRecord, head: HeadRef, orient: EntryOrientation) -> Result<EntryExperiment> {
    let (t1, t3) = (puzzle.t(1), puzzle.t(3));
    if t1 == t3 {
        return Err(Error::Degenerate { id: puzzle.id.clone(), reason: "t1 == t3".into() });
    }
    let (query, key) = match orient {
        EntryOrientation::QueryT1 => (t1, t3),
        EntryOrientation::QueryT3 => (t3, t1),
    };
    let board = puzzle.board()?;
    let best = puzzle.best_move();
    let site = ActivationSite::AttnEntry { layer: head.layer, head: head.head, query, key };
    let mut reads = HookSet::new();
    reads.read(site);
    let out = model.forward_board(&board, &reads, TraceLevel::None)?;
    let qk = ForwardTrace::head_matrix(&out.trace.qk_scores, head.layer, head.head).expect("scores traced");
    let sm = ForwardTrace::head_matrix(&out.trace.smolgen_scores, head.layer, head.head).expect("scores traced");
    let scores: Vec<f32> = qk.iter().zip(sm).map(|(a, b)| a + b).collect();
    let idx = query.index() * 64 + key.index();

    let single = ablate_attention_entries(model, &board, &[(head.layer, head.head, query, key)], best)?;
    let others: Vec<Entry> = (0..4096)
        .filter(|&i| i != idx)
        .map(|i| (head.layer, head.head, Square::from_index(i / 64), Square::from_index(i % 64)))
        .collect();
    let complement = ablate_attention_entries(model, &board, &others, best)?;
    Ok(EntryExperiment {
        puzzle_id: puzzle.id.clone(),
        head,
        query,
        key,
        single,
        complement,
        entry_is_global_max: is_strict_max(&scores, idx),
    })
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PieceAblation {
    pub puzzle_id: String,
    pub kind: PieceKind,
    pub random_square: Square,
    pub matched: Effect,
    pub other_type: Effect,
    pub random: Effect,
}

/// Deterministic per-puzzle RNG seed.
pub fn puzzle_seed(id: &str, seed: u64) -> u64 {
    let h = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(id.as_bytes()).finalize();
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

/// Entries with key `key` in every listed head, except the one whose query is `keep`.
fn key_entries(heads: &[HeadRef], key: Square, keep: Square) -> Vec<Entry> {
    let mut v = Vec::new();
    for h in heads {
        for q in Square::all().filter(|&q| q != keep) {
            v.push((h.layer, h.head, q, key));
        }
    }
    v
}

/// Piece kinds that have head families.
pub const HEAD_KINDS: [PieceKind; 3] = [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook];

/// Ablates the key-t3 entries of heads tagged with the third move's piece
/// kind, of heads of the other two kinds, and of matched heads at a random
/// non-special square.
pub fn piece_head_ablation(model: &Model, puzzle: &PuzzleRecord, tags: &[HeadTag], seed: u64) -> Result<PieceAblation> {
    if puzzle.pv.len() <= 3 {
        return Err(Error::Degenerate { id: puzzle.id.clone(), reason: "principal variation not longer than 3".into() });
    }
    let state3 = puzzle.state(3)?;
    let kind = state3
        .piece_at(puzzle.pv[2].source)
        .map(|p| p.kind)
        .ok_or_else(|| Error::Degenerate { id: puzzle.id.clone(), reason: "no piece on s3".into() })?;
    if !HEAD_KINDS.contains(&kind) {
        return Err(Error::Degenerate {
            id: puzzle.id.clone(),
            reason: format!("third move is by a {}, which has no head family", kind.name()),
        });
    }
    let heads_of = |k: PieceKind| -> Vec<HeadRef> { tags.iter().filter(|t| t.kind == k).map(|t| t.head).collect() };
    let matched_heads = heads_of(kind);
    if matched_heads.is_empty() {
        return Err(Error::NoTaggedHeads(kind.name().into()));
    }
    let other_heads: Vec<HeadRef> = HEAD_KINDS.iter().filter(|&&k| k != kind).flat_map(|&k| heads_of(k)).collect();

    let board = puzzle.board()?;
    let frame = |sq: Square| board.to_player_frame(sq);
    let (s3, t3) = (puzzle.s(3), puzzle.t(3));
    let mut special: Vec<Square> = puzzle.pv[..3].iter().flat_map(|m| [frame(m.source), frame(m.target)]).collect();
    if let Some(c) = &puzzle.corruption {
        special.extend(c.mutation.changed_squares().into_iter().map(frame));
    }
    let pool: Vec<Square> = Square::all().filter(|s| !special.contains(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(puzzle_seed(&puzzle.id, seed));
    let random_square = pool[rng.random_range(0..pool.len())];

    let best = puzzle.best_move();
    Ok(PieceAblation {
        puzzle_id: puzzle.id.clone(),
        kind,
        random_square,
        matched: ablate_attention_entries(model, &board, &key_entries(&matched_heads, t3, s3), best)?,
        other_type: ablate_attention_entries(model, &board, &key_entries(&other_heads, t3, s3), best)?,
        random: ablate_attention_entries(model, &board, &key_entries(&matched_heads, random_square, s3), best)?,
    })
}

/// Model-frame squares changed by the puzzle's corruption.
pub fn corrupted_squares(puzzle: &PuzzleRecord) -> Result<Vec<Square>> {
    let board = puzzle.board()?;
    Ok(puzzle
        .corruption
        .as_ref()
        .map(|c| c.mutation.changed_squares().into_iter().map(|s| board.to_player_frame(s)).collect())
        .unwrap_or_default())
}

/// Builds the patch context for a puzzle with a selected corruption.
pub fn puzzle_context<'m>(model: &'m Model, puzzle: &PuzzleRecord) -> Result<PatchContext<'m>> {
    let c = puzzle.corruption.as_ref().ok_or(Error::NoCorruption)?;
    PatchContext::new(model, &puzzle.id, &puzzle.board()?, &c.board()?, puzzle.best_move())
}
