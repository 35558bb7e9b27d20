// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-mutation corruptions of a board, the three survival filters, and
//! the lowest-impact pick.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chess::{Board, Color, Move, Piece, PieceKind, Square};
use crate::error::{Error, Result};
use crate::interventions::log_odds;
use crate::model::{MoveDist, PolicyModel};

/// One edit to the clean board. The derived order is the tie-break order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    AddPawn { color: Color, square: Square },
    RemovePawn { square: Square },
    MovePiece { from: Square, to: Square },
}

impl Mutation {
    /// Absolute squares whose contents differ from the clean board.
    pub fn changed_squares(&self) -> Vec<Square> {
        match *self {
            Mutation::AddPawn { square, .. } | Mutation::RemovePawn { square } => vec![square],
            Mutation::MovePiece { from, to } => vec![from, to],
        }
    }

    /// Applies the mutation, returning `None` when the result is not a legal
    /// position or the move is not one of the allowed kinds.
    pub fn apply(&self, clean: &Board) -> Option<Board> {
        let mut b = clean.clone();
        match *self {
            Mutation::AddPawn { color, square } => {
                if b.piece_at(square).is_some() || square.rank() == 0 || square.rank() == 7 {
                    return None;
                }
                b.put(square, Piece::new(color, PieceKind::Pawn));
            }
            Mutation::RemovePawn { square } => {
                b.piece_at(square).filter(|p| p.kind == PieceKind::Pawn)?;
                b.remove(square);
            }
            Mutation::MovePiece { from, to } => {
                let piece = b.piece_at(from).filter(|p| p.kind != PieceKind::Pawn)?;
                if b.piece_at(to).is_some() {
                    return None;
                }
                b.remove(from);
                b.put(to, piece);
                b.set_en_passant(None);
            }
        }
        b.sanitize_rights();
        (b.is_legal_position() && !b.legal_moves().is_empty()).then_some(b)
    }
}

impl std::fmt::Display for Mutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mutation::AddPawn { color, square } => write!(f, "add {color:?} pawn {square}"),
            Mutation::RemovePawn { square } => write!(f, "remove pawn {square}"),
            Mutation::MovePiece { from, to } => write!(f, "move {from}->{to}"),
        }
    }
}

/// Model readings used by the filters and the selection step.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Strong model's probability of the clean best move on the corrupted board.
    pub strong_prob: f64,
    pub weak_log_odds_clean: f64,
    pub weak_log_odds_corrupted: f64,
    pub strong_value_clean: f64,
    pub strong_value_corrupted: f64,
    /// JSD between the weak model's clean and corrupted distributions, nats.
    pub weak_jsd: f64,
    /// Whether the clean best move is still legal after the mutation.
    pub best_still_legal: bool,
}

impl Diagnostics {
    pub fn weak_drop(&self) -> f64 {
        self.weak_log_odds_clean - self.weak_log_odds_corrupted
    }

    pub fn value_gain(&self) -> f64 {
        self.strong_value_corrupted - self.strong_value_clean
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CorruptionCandidate {
    /// Corrupted board, absolute frame.
    pub fen: String,
    pub mutation: Mutation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl CorruptionCandidate {
    pub fn board(&self) -> Result<Board> {
        Board::from_fen(&self.fen)
    }
}

/// Every legal single-mutation variant of `clean`, in mutation order.
pub fn generate_candidates(clean: &Board) -> Vec<CorruptionCandidate> {
    let clean = clean.to_absolute();
    let mut muts = Vec::new();
    for sq in Square::all() {
        match clean.piece_at(sq) {
            None => {
                for color in Color::BOTH {
                    muts.push(Mutation::AddPawn { color, square: sq });
                }
            }
            Some(p) if p.kind == PieceKind::Pawn => muts.push(Mutation::RemovePawn { square: sq }),
            Some(_) => {
                for to in Square::all().filter(|t| clean.piece_at(*t).is_none()) {
                    muts.push(Mutation::MovePiece { from: sq, to });
                }
            }
        }
    }
    muts.sort();
    muts.into_iter()
        .filter_map(|m| m.apply(&clean).map(|b| CorruptionCandidate { fen: b.fen(), mutation: m, diagnostics: None }))
        .collect()
}

/// Jensen-Shannon divergence in nats over the union of both supports.
/// Both inputs are renormalised first.
pub fn jensen_shannon(p: &MoveDist, q: &MoveDist) -> f64 {
    let (zp, zq) = (p.total(), q.total());
    let mut moves: Vec<Move> = p.entries().iter().chain(q.entries()).map(|e| e.0).collect();
    moves.sort();
    moves.dedup();
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for mv in moves {
        let (a, b) = (p.prob(mv) / zp, q.prob(mv) / zq);
        let m = (a + b) / 2.0;
        total += 0.5 * (term(a, m) + term(b, m));
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

/// Thresholds of the three filters; each can be switched off.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub strong_max_prob: f64,
    pub weak_max_drop: f64,
    pub value_max_gain: f64,
    pub use_strong: bool,
    pub use_weak: bool,
    pub use_value: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            strong_max_prob: 0.10,
            weak_max_drop: 0.2,
            value_max_gain: 0.1,
            use_strong: true,
            use_weak: true,
            use_value: true,
        }
    }
}

/// Outcome of each filter for one candidate.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FilterDecision {
    pub strong: bool,
    pub weak: bool,
    pub value: bool,
}

impl FilterDecision {
    pub fn keep(&self) -> bool {
        self.strong && self.weak && self.value
    }
}

impl FilterConfig {
    pub fn decide(&self, d: &Diagnostics) -> FilterDecision {
        FilterDecision {
            strong: !self.use_strong || d.strong_prob < self.strong_max_prob,
            weak: !self.use_weak || d.weak_drop() <= self.weak_max_drop,
            value: !self.use_value || d.value_gain() <= self.value_max_gain,
        }
    }
}

/// Clean-board readings shared by all candidates of one puzzle.
#[derive(Clone, Debug)]
pub struct CleanReadings {
    pub weak_dist: MoveDist,
    pub weak_log_odds: f64,
    pub strong_value: f64,
}

impl CleanReadings {
    pub fn compute(strong: &dyn PolicyModel, weak: &dyn PolicyModel, clean: &Board, best: Move) -> Result<Self> {
        let w = weak.evaluate(clean)?;
        let s = strong.evaluate(clean)?;
        Ok(CleanReadings { weak_log_odds: log_odds(w.dist.prob(best)), weak_dist: w.dist, strong_value: s.value })
    }
}

/// Evaluates both models on one corrupted board.
pub fn diagnose(
    strong: &dyn PolicyModel,
    weak: &dyn PolicyModel,
    clean: &CleanReadings,
    board: &Board,
    best: Move,
) -> Result<Diagnostics> {
    let s = strong.evaluate(board)?;
    let w = weak.evaluate(board)?;
    Ok(Diagnostics {
        strong_prob: s.dist.prob(best),
        weak_log_odds_clean: clean.weak_log_odds,
        weak_log_odds_corrupted: log_odds(w.dist.prob(best)),
        strong_value_clean: clean.strong_value,
        strong_value_corrupted: s.value,
        weak_jsd: jensen_shannon(&clean.weak_dist, &w.dist),
        best_still_legal: board.is_legal_move(best),
    })
}

/// Fills in diagnostics and keeps the candidates that pass every enabled
/// filter. Order is preserved.
pub fn filter_candidates(
    strong: &dyn PolicyModel,
    weak: &dyn PolicyModel,
    clean: &Board,
    best: Move,
    candidates: Vec<CorruptionCandidate>,
    config: &FilterConfig,
) -> Result<Vec<CorruptionCandidate>> {
    let readings = CleanReadings::compute(strong, weak, clean, best)?;
    let diagnosed: Vec<Result<CorruptionCandidate>> = candidates
        .into_par_iter()
        .map(|mut c| {
            c.diagnostics = Some(diagnose(strong, weak, &readings, &c.board()?, best)?);
            Ok(c)
        })
        .collect();
    let mut out = Vec::new();
    for c in diagnosed {
        let c = c?;
        if config.decide(c.diagnostics.as_ref().expect("diagnosed")).keep() {
            out.push(c);
        }
    }
    Ok(out)
}

/// The survivor whose weak-model distribution moved least; the first one
/// wins ties. Survivors must carry diagnostics.
pub fn select_corruption(survivors: &[CorruptionCandidate]) -> Result<CorruptionCandidate> {
    let mut best: Option<(&CorruptionCandidate, f64)> = None;
    for c in survivors {
        let jsd = c
            .diagnostics
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("candidate {} has no diagnostics", c.mutation)))?
            .weak_jsd;
        if best.is_none_or(|(_, b)| jsd < b) {
            best = Some((c, jsd));
        }
    }
    best.map(|b| b.0.clone()).ok_or(Error::NoCorruption)
}

/// Summary of one full search.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub candidates: usize,
    pub survivors: usize,
    pub selected: Option<CorruptionCandidate>,
}

/// Generate, filter, select.
pub fn find_corruption(
    strong: &dyn PolicyModel,
    weak: &dyn PolicyModel,
    clean: &Board,
    best: Move,
    config: &FilterConfig,
) -> Result<SearchOutcome> {
    let candidates = generate_candidates(clean);
    let n = candidates.len();
    let survivors = filter_candidates(strong, weak, clean, best, candidates, config)?;
    let selected = match select_corruption(&survivors) {
        Ok(c) => Some(c),
        Err(Error::NoCorruption) => None,
        Err(e) => return Err(e),
    };
    Ok(SearchOutcome { candidates: n, survivors: survivors.len(), selected })
}
