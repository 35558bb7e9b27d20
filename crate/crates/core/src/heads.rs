// SPDX-License-Identifier: MIT OR Apache-2.0

//! Piece-movement head detection and the max-entry statistic.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chess::{reachability_mask, Board, PieceKind, Square};
use crate::error::Result;
use crate::interventions::{is_strict_max, puzzle_seed, EntryOrientation, HeadRef, HEAD_KINDS};
use crate::model::{ForwardTrace, HookSet, Model, TraceLevel};
use crate::puzzles::PuzzleRecord;

/// Default detection threshold on the mass-on-mask score.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct HeadTag {
    pub head: HeadRef,
    pub kind: PieceKind,
    pub score: f64,
}

/// Query square used for `board`; depends only on the board and the seed.
pub fn query_square(board: &Board, seed: u64) -> Square {
    let mut rng = ChaCha8Rng::seed_from_u64(puzzle_seed(&board.fen(), seed));
    Square::from_index(rng.random_range(0..64))
}

/// Attention mass on the `kind` mask of `query` in one 64×64 pattern.
pub fn mask_mass(pattern: &[f32], query: Square, kind: PieceKind) -> f64 {
    let mask = reachability_mask(query, kind);
    let row = &pattern[query.index() * 64..(query.index() + 1) * 64];
    row.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &a)| a as f64).sum()
}

/// Scores of every head for knight, bishop and rook, layer-major.
pub fn all_head_scores(model: &Model, boards: &[Board], seed: u64) -> Result<Vec<[f64; 3]>> {
    let spec = model.spec();
    let n_heads = spec.n_layers * spec.n_heads;
    let per_board: Vec<Vec<[f64; 3]>> = boards
        .par_iter()
        .map(|b| {
            let out = model.forward_board(b, &HookSet::new(), TraceLevel::Full)?;
            let query = query_square(b, seed);
            let mut v = Vec::with_capacity(n_heads);
            for layer in 0..spec.n_layers {
                for head in 0..spec.n_heads {
                    let pat = ForwardTrace::head_matrix(&out.trace.attn, layer, head).expect("full trace");
                    v.push(HEAD_KINDS.map(|k| mask_mass(pat, query, k)));
                }
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    // Sum sorted contributions so the board order cannot change the result.
    let mut out = vec![[0.0; 3]; n_heads];
    for (h, slot) in out.iter_mut().enumerate() {
        for k in 0..3 {
            let mut xs: Vec<f64> = per_board.iter().map(|v| v[h][k]).collect();
            xs.sort_by(f64::total_cmp);
            slot[k] = xs.iter().sum::<f64>() / boards.len().max(1) as f64;
        }
    }
    Ok(out)
}

/// Mean attention mass a head puts on the squares a `kind` piece on the
/// query square could reach, over boards and seeded query squares.
pub fn piece_head_score(model: &Model, boards: &[Board], head: HeadRef, kind: PieceKind, seed: u64) -> Result<f64> {
    let k = HEAD_KINDS.iter().position(|&x| x == kind);
    let Some(k) = k else {
        // Other kinds share the same computation through the mask.
        let mut xs = boards
            .par_iter()
            .map(|b| {
                let out = model.forward_board(b, &HookSet::new(), TraceLevel::Full)?;
                let pat = ForwardTrace::head_matrix(&out.trace.attn, head.layer, head.head).expect("full trace");
                Ok(mask_mass(pat, query_square(b, seed), kind))
            })
            .collect::<Result<Vec<f64>>>()?;
        xs.sort_by(f64::total_cmp);
        return Ok(xs.iter().sum::<f64>() / boards.len().max(1) as f64);
    };
    let scores = all_head_scores(model, boards, seed)?;
    Ok(scores[head.layer * model.spec().n_heads + head.head][k])
}

/// Tags each head whose best kind score exceeds `threshold` with that kind.
pub fn detect_piece_heads(model: &Model, boards: &[Board], threshold: f64, seed: u64) -> Result<Vec<HeadTag>> {
    let scores = all_head_scores(model, boards, seed)?;
    Ok(tags_from_scores(&scores, model.spec().n_heads, threshold))
}

pub fn tags_from_scores(scores: &[[f64; 3]], n_heads: usize, threshold: f64) -> Vec<HeadTag> {
    let mut tags = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        let mut best = 0;
        for k in 1..3 {
            if s[k] > s[best] {
                best = k;
            }
        }
        if s[best] > threshold {
            tags.push(HeadTag { head: HeadRef { layer: i / n_heads, head: i % n_heads }, kind: HEAD_KINDS[best], score: s[best] });
        }
    }
    tags
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct MaxEntryStatistic {
    pub hits: usize,
    /// Puzzles with t1 != t3.
    pub total: usize,
    pub skipped: usize,
}

impl MaxEntryStatistic {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Whether the (t1, t3) pre-softmax score of `head` is the strict maximum
/// of its 64×64 block. `None` when t1 == t3.
pub fn entry_is_max(model: &Model, puzzle: &PuzzleRecord, head: HeadRef, orient: EntryOrientation) -> Result<Option<bool>> {
    let (t1, t3) = (puzzle.t(1), puzzle.t(3));
    if t1 == t3 {
        return Ok(None);
    }
    let (q, k) = match orient {
        EntryOrientation::QueryT1 => (t1, t3),
        EntryOrientation::QueryT3 => (t3, t1),
    };
    let mut hooks = HookSet::new();
    hooks.read(crate::model::ActivationSite::AttnEntry { layer: head.layer, head: head.head, query: q, key: k });
    let out = model.forward_board(&puzzle.board()?, &hooks, TraceLevel::None)?;
    let qk = ForwardTrace::head_matrix(&out.trace.qk_scores, head.layer, head.head).expect("scores traced");
    let sm = ForwardTrace::head_matrix(&out.trace.smolgen_scores, head.layer, head.head).expect("scores traced");
    let scores: Vec<f32> = qk.iter().zip(sm).map(|(a, b)| a + b).collect();
    Ok(Some(is_strict_max(&scores, q.index() * 64 + k.index())))
}

/// Fraction of puzzles whose (t1, t3) entry is the head's strict maximum.
pub fn max_entry_statistic(
    model: &Model,
    dataset: &[PuzzleRecord],
    head: HeadRef,
    orient: EntryOrientation,
) -> Result<MaxEntryStatistic> {
    let flags = dataset.par_iter().map(|p| entry_is_max(model, p, head, orient)).collect::<Result<Vec<_>>>()?;
    Ok(MaxEntryStatistic {
        hits: flags.iter().filter(|f| **f == Some(true)).count(),
        total: flags.iter().filter(|f| f.is_some()).count(),
        skipped: flags.iter().filter(|f| f.is_none()).count(),
    })
}

/// Positions from seeded random playouts of 8 to 40 plies from the start.
pub fn sample_boards(n: usize, seed: u64) -> Vec<Board> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let plies = rng.random_range(8..=40);
        let mut b = Board::start();
        for _ in 0..plies {
            let moves = b.legal_moves();
            let Some(&mv) = moves.choose(&mut rng) else { break };
            b = b.apply_move(mv).expect("legal move");
        }
        if !b.legal_moves().is_empty() {
            out.push(b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_mass_of_uniform_row_is_density() {
        let pat = vec![1.0 / 64.0; 4096];
        let q: Square = "b1".parse().unwrap();
        let m = mask_mass(&pat, q, PieceKind::Knight);
        assert!((m - 3.0 / 64.0).abs() < 1e-9);
    }

    #[test]
    fn threshold_monotone() {
        let scores = vec![[0.9, 0.1, 0.0], [0.2, 0.6, 0.3], [0.1, 0.1, 0.1]];
        let a = tags_from_scores(&scores, 3, 0.5);
        let b = tags_from_scores(&scores, 3, 0.7);
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 1);
        assert!(tags_from_scores(&scores, 3, 1.01).is_empty());
        assert_eq!(a[1].kind, PieceKind::Bishop);
    }

    #[test]
    fn sampled_boards_are_seeded() {
        assert_eq!(sample_boards(5, 1), sample_boards(5, 1));
        assert!(sample_boards(5, 1).iter().all(|b| b.is_legal_position()));
    }
}
