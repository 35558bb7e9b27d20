// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::forward::{Model, PolicyOutput, TraceLevel, ValueOutput};
use super::hooks::HookSet;
use crate::chess::{Board, Color, Move, Orientation, PieceKind};
use crate::error::{Error, Result};

/// A probability distribution over moves, sorted by move.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct MoveDist {
    entries: Vec<(Move, f64)>,
}

impl MoveDist {
    /// Builds a distribution; entries are sorted and must not repeat.
    pub fn new(mut entries: Vec<(Move, f64)>) -> MoveDist {
        entries.sort_by_key(|a| a.0);
        debug_assert!(entries.windows(2).all(|w| w[0].0 != w[1].0));
        MoveDist { entries }
    }

    /// Softmax of `(move, logit)` pairs in f64.
    pub fn from_logits(logits: Vec<(Move, f64)>) -> MoveDist {
        let max = logits.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<(Move, f64)> = logits.into_iter().map(|(m, l)| (m, (l - max).exp())).collect();
        let sum: f64 = exps.iter().map(|x| x.1).sum();
        MoveDist::new(exps.into_iter().map(|(m, e)| (m, e / sum)).collect())
    }

    pub fn entries(&self) -> &[(Move, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Probability of `mv`; 0 for moves outside the support.
    pub fn prob(&self, mv: Move) -> f64 {
        self.entries
            .binary_search_by(|e| e.0.cmp(&mv))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Most likely move; ties go to the smallest move.
    pub fn best(&self) -> Option<Move> {
        let mut best: Option<(Move, f64)> = None;
        for &(m, p) in &self.entries {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((m, p));
            }
        }
        best.map(|b| b.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Maps a move on `board` to the model's player frame.
fn to_model_frame(board: &Board, mv: Move) -> Move {
    if board.orientation() == Orientation::Absolute && board.side_to_move() == Color::Black {
        mv.flipped()
    } else {
        mv
    }
}

/// Legal-masked softmax over the policy logits. Moves are reported in
/// `board`'s own frame. Without a promotion block only queen promotions get
/// a logit; under-promotions are left out of the support.
pub fn policy_distribution(policy: &PolicyOutput, board: &Board) -> Result<MoveDist> {
    let legal = board.legal_moves();
    if legal.is_empty() {
        return Err(Error::Terminal);
    }
    let mut logits = Vec::with_capacity(legal.len());
    for mv in legal {
        let m = to_model_frame(board, mv);
        let base = policy.logits[m.source.index() * 64 + m.target.index()] as f64;
        let logit = match (mv.promotion, &policy.promotion) {
            (None, _) => Some(base),
            (Some(PieceKind::Queen), None) => Some(base),
            (Some(_), None) => None,
            (Some(kind), Some(offsets)) => {
                let slot = match kind {
                    PieceKind::Queen => 0,
                    PieceKind::Rook => 1,
                    PieceKind::Bishop => 2,
                    _ => 3,
                };
                (slot < policy.promotion_pieces)
                    .then(|| base + offsets[m.target.index() * policy.promotion_pieces + slot] as f64)
            }
        };
        if let Some(l) = logit {
            logits.push((mv, l));
        }
    }
    Ok(MoveDist::from_logits(logits))
}

/// Win minus loss.
pub fn value_score(value: &ValueOutput) -> f64 {
    value.wdl[0] as f64 - value.wdl[2] as f64
}

#[derive(Clone, PartialEq, Debug)]
pub struct Evaluation {
    pub dist: MoveDist,
    /// Win minus loss for the side to move.
    pub value: f64,
}

/// Anything that maps a board to a move distribution and a value. The
/// strong transformer implements it; so can a weaker reference model.
pub trait PolicyModel: Sync {
    fn evaluate(&self, board: &Board) -> Result<Evaluation>;
    /// Stable content hash identifying the model.
    fn fingerprint(&self) -> String;
}

impl PolicyModel for Model {
    fn evaluate(&self, board: &Board) -> Result<Evaluation> {
        let out = self.forward_board(board, &HookSet::new(), TraceLevel::None)?;
        Ok(Evaluation { dist: policy_distribution(&out.policy, board)?, value: value_score(&out.value) })
    }

    fn fingerprint(&self) -> String {
        Model::fingerprint(self).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_policy() -> PolicyOutput {
        PolicyOutput { logits: vec![0.0; 4096], promotion: None, promotion_pieces: 0 }
    }

    #[test]
    fn single_legal_move_gets_everything() {
        // Black king on a8 next to the white king; only Ka7 is legal.
        let b = Board::from_fen("k7/2K5/8/8/8/8/8/8 b - - 0 1").unwrap();
        let moves = b.legal_moves();
        assert_eq!(moves.len(), 1, "{moves:?}");
        let d = policy_distribution(&uniform_policy(), &b).unwrap();
        assert_eq!(d.prob(moves[0]), 1.0);
    }

    #[test]
    fn equal_logits_uniform() {
        let d = policy_distribution(&uniform_policy(), &Board::start()).unwrap();
        assert_eq!(d.len(), 20);
        for &(_, p) in d.entries() {
            assert!((p - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_position_errors() {
        let b = Board::from_fen("rnb1kbnr/pppp1ppp/8/4p3/6Pq/5P2/PPPPP2P/RNBQKBNR w KQkq - 1 3").unwrap();
        assert!(matches!(policy_distribution(&uniform_policy(), &b), Err(Error::Terminal)));
    }

    #[test]
    fn black_moves_read_flipped_logits() {
        let b = Board::from_fen("4k3/4p3/8/8/8/8/8/4K3 b - - 0 1").unwrap();
        let mut p = uniform_policy();
        // e2e4 in the player frame is e7e5 on the board.
        p.logits[12 * 64 + 28] = 10.0;
        let d = policy_distribution(&p, &b).unwrap();
        assert_eq!(d.best(), Some("e7e5".parse().unwrap()));
    }

    #[test]
    fn underpromotion_masked_without_block() {
        let b = Board::from_fen("8/P6k/8/8/8/8/8/K7 w - - 0 1").unwrap();
        let d = policy_distribution(&uniform_policy(), &b).unwrap();
        assert!(d.prob("a7a8q".parse().unwrap()) > 0.0);
        assert_eq!(d.prob("a7a8n".parse().unwrap()), 0.0);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_score_examples() {
        assert_eq!(value_score(&ValueOutput { wdl: [1.0, 0.0, 0.0] }), 1.0);
        assert_eq!(value_score(&ValueOutput { wdl: [0.0, 1.0, 0.0] }), 0.0);
        assert!((value_score(&ValueOutput { wdl: [0.2, 0.3, 0.5] }) + 0.3).abs() < 1e-7);
    }
}
