// SPDX-License-Identifier: MIT OR Apache-2.0

//! Legal move generation: pseudo-legal moves filtered by making each one
//! and testing the mover's king.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::attacks;
use super::board::{Board, CastleSide};
use super::square::{squares_of, Color, Piece, PieceKind, Square};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub source: Square,
    pub target: Square,
    pub promotion: Option<PieceKind>,
}

impl Move {
    pub const fn new(source: Square, target: Square) -> Move {
        Move { source, target, promotion: None }
    }

    pub const fn promoting(source: Square, target: Square, kind: PieceKind) -> Move {
        Move { source, target, promotion: Some(kind) }
    }

    /// Syntax-only UCI parse; legality is checked by [`Board::parse_uci`].
    pub fn from_uci(text: &str) -> Result<Move> {
        let bad = || Error::Uci(text.to_string());
        if !(4..=5).contains(&text.len()) || !text.is_ascii() {
            return Err(bad());
        }
        let source: Square = text[0..2].parse().map_err(|_| bad())?;
        let target: Square = text[2..4].parse().map_err(|_| bad())?;
        let promotion = match text[4..].chars().next() {
            None => None,
            Some(c) => match PieceKind::from_char(c) {
                Some(k @ (PieceKind::Knight | PieceKind::Bishop | PieceKind::Rook | PieceKind::Queen))
                    if c.is_ascii_lowercase() =>
                {
                    Some(k)
                }
                _ => return Err(bad()),
            },
        };
        if source == target {
            return Err(bad());
        }
        Ok(Move { source, target, promotion })
    }

    pub fn uci(&self) -> String {
        self.to_string()
    }

    /// The same move expressed after a vertical flip of the board.
    pub fn flipped(self) -> Move {
        Move {
            source: self.source.flip_vertical(),
            target: self.target.flip_vertical(),
            promotion: self.promotion,
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.source, self.target)?;
        if let Some(p) = self.promotion {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Move {
    type Err = Error;
    fn from_str(s: &str) -> Result<Move> {
        Move::from_uci(s)
    }
}

impl Serialize for Move {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Move {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const PROMOTIONS: [PieceKind; 4] = [PieceKind::Queen, PieceKind::Rook, PieceKind::Bishop, PieceKind::Knight];

impl Board {
    fn pseudo_legal(&self, out: &mut Vec<Move>) {
        let us = self.side_to_move();
        let them = us.other();
        let own = self.color_bb(us);
        let enemy = self.color_bb(them);
        let occ = own | enemy;

        let (push, start_rank, last_rank): (i8, u8, u8) = match us {
            Color::White => (1, 1, 7),
            Color::Black => (-1, 6, 0),
        };
        for from in squares_of(self.pieces(us, PieceKind::Pawn)) {
            let add = |to: Square, out: &mut Vec<Move>| {
                if to.rank() == last_rank {
                    for k in PROMOTIONS {
                        out.push(Move::promoting(from, to, k));
                    }
                } else {
                    out.push(Move::new(from, to));
                }
            };
            if let Some(one) = from.offset(0, push) {
                if occ & one.bit() == 0 {
                    add(one, out);
                    if from.rank() == start_rank {
                        let two = one.offset(0, push).unwrap();
                        if occ & two.bit() == 0 {
                            out.push(Move::new(from, two));
                        }
                    }
                }
            }
            let caps = attacks::pawn(us, from);
            for to in squares_of(caps & enemy) {
                add(to, out);
            }
            if let Some(ep) = self.en_passant() {
                if caps & ep.bit() != 0 {
                    out.push(Move::new(from, ep));
                }
            }
        }

        for kind in [PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook, PieceKind::Queen, PieceKind::King] {
            for from in squares_of(self.pieces(us, kind)) {
                let targets = match kind {
                    PieceKind::Knight => attacks::knight(from),
                    PieceKind::Bishop => attacks::bishop(from, occ),
                    PieceKind::Rook => attacks::rook(from, occ),
                    PieceKind::Queen => attacks::queen(from, occ),
                    _ => attacks::king(from),
                } & !own;
                for to in squares_of(targets) {
                    out.push(Move::new(from, to));
                }
            }
        }

        // Castling. Rights are kept consistent with king/rook placement.
        let back = if us == Color::White { 0 } else { 7 };
        let king_from = Square::from_coords(4, back).unwrap();
        if self.castling().is_empty() || self.is_in_check(us) {
            return;
        }
        for side in [CastleSide::King, CastleSide::Queen] {
            if !self.castling().has(us, side) {
                continue;
            }
            let (empty_files, pass_files, to_file): (&[u8], &[u8], u8) = match side {
                CastleSide::King => (&[5, 6], &[5, 6], 6),
                CastleSide::Queen => (&[1, 2, 3], &[3, 2], 2),
            };
            let clear = empty_files
                .iter()
                .all(|&f| occ & Square::from_coords(f, back).unwrap().bit() == 0);
            if !clear {
                continue;
            }
            let safe = pass_files
                .iter()
                .all(|&f| !self.is_attacked(Square::from_coords(f, back).unwrap(), them));
            if safe {
                out.push(Move::new(king_from, Square::from_coords(to_file, back).unwrap()));
            }
        }
    }

    /// Plays `mv` without checking legality. `mv` must at least be
    /// pseudo-legal in this position.
    pub(crate) fn play_unchecked(&self, mv: Move) -> Board {
        let mut b = self.clone();
        let us = self.side_to_move();
        let them = us.other();
        let moving = self.piece_at(mv.source).expect("move source is occupied");
        let mut captured = b.remove(mv.target);
        b.remove(mv.source);

        let mut new_ep = None;
        if moving.kind == PieceKind::Pawn {
            if Some(mv.target) == self.en_passant() && captured.is_none() {
                let victim = Square::from_coords(mv.target.file(), mv.source.rank()).unwrap();
                captured = b.remove(victim);
            }
            if mv.source.rank().abs_diff(mv.target.rank()) == 2 {
                let mid = Square::from_coords(mv.source.file(), (mv.source.rank() + mv.target.rank()) / 2).unwrap();
                new_ep = Some(mid);
            }
        }
        let placed = match mv.promotion {
            Some(k) => Piece::new(us, k),
            None => moving,
        };
        b.put(mv.target, placed);

        if moving.kind == PieceKind::King && mv.source.file().abs_diff(mv.target.file()) == 2 {
            let back = mv.source.rank();
            let (rook_from, rook_to) = if mv.target.file() == 6 { (7, 5) } else { (0, 3) };
            let rook = b.remove(Square::from_coords(rook_from, back).unwrap());
            b.put(
                Square::from_coords(rook_to, back).unwrap(),
                rook.unwrap_or(Piece::new(us, PieceKind::Rook)),
            );
        }

        b.set_side_to_move(them);
        b.set_en_passant(new_ep);
        let halfmove = if moving.kind == PieceKind::Pawn || captured.is_some() {
            0
        } else {
            self.halfmove_clock() + 1
        };
        let fullmove = self.fullmove_number() + u32::from(us == Color::Black);
        b.set_clocks(halfmove, fullmove);
        b.sanitize_rights();
        b
    }

    /// Every legal move for the side to move, sorted.
    pub fn legal_moves(&self) -> Vec<Move> {
        let mut pseudo = Vec::with_capacity(64);
        self.pseudo_legal(&mut pseudo);
        let us = self.side_to_move();
        let mut moves: Vec<Move> = pseudo
            .into_iter()
            .filter(|&mv| !self.play_unchecked(mv).is_in_check(us))
            .collect();
        moves.sort_unstable();
        moves
    }

    pub fn is_legal_move(&self, mv: Move) -> bool {
        self.legal_moves().binary_search(&mv).is_ok()
    }

    /// Applies a legal move; anything else is rejected with the move named.
    pub fn apply_move(&self, mv: Move) -> Result<Board> {
        if !self.is_legal_move(mv) {
            return Err(Error::IllegalMove { uci: mv.uci(), fen: self.fen() });
        }
        Ok(self.play_unchecked(mv))
    }

    /// Parses a UCI move and checks that it is legal here.
    pub fn parse_uci(&self, text: &str) -> Result<Move> {
        let mv = Move::from_uci(text)?;
        if self.is_legal_move(mv) {
            Ok(mv)
        } else {
            Err(Error::IllegalMove { uci: text.to_string(), fen: self.fen() })
        }
    }

    pub fn is_checkmate(&self) -> bool {
        self.is_in_check(self.side_to_move()) && self.legal_moves().is_empty()
    }

    pub fn perft(&self, depth: u32) -> u64 {
        if depth == 0 {
            return 1;
        }
        let moves = self.legal_moves();
        if depth == 1 {
            return moves.len() as u64;
        }
        moves.iter().map(|&mv| self.play_unchecked(mv).perft(depth - 1)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chess::board::START_FEN;

    const KIWIPETE: &str = "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1";

    #[test]
    fn start_perft() {
        let b = Board::from_fen(START_FEN).unwrap();
        assert_eq!(b.perft(0), 1);
        assert_eq!(b.perft(1), 20);
        assert_eq!(b.perft(2), 400);
        assert_eq!(b.perft(3), 8902);
    }

    #[test]
    fn kiwipete_perft() {
        let b = Board::from_fen(KIWIPETE).unwrap();
        assert_eq!(b.perft(1), 48);
        assert_eq!(b.perft(2), 2039);
    }

    #[test]
    fn lone_kings() {
        let b = Board::from_fen("4k3/8/8/8/8/8/8/4K3 w - - 0 1").unwrap();
        assert_eq!(b.legal_moves().len(), 5);
    }

    #[test]
    fn checkmate_has_no_moves() {
        // fool's mate
        let b = Board::from_fen("rnb1kbnr/pppp1ppp/8/4p3/6Pq/5P2/PPPPP2P/RNBQKBNR w KQkq - 1 3").unwrap();
        assert!(b.legal_moves().is_empty());
        assert!(b.is_checkmate());
    }

    #[test]
    fn e2e4_sets_en_passant() {
        let b = Board::start();
        let after = b.apply_move("e2e4".parse().unwrap()).unwrap();
        assert_eq!(after.side_to_move(), Color::Black);
        assert_eq!(after.en_passant(), Some("e3".parse().unwrap()));
        assert_eq!(
            after.piece_at("e4".parse().unwrap()),
            Some(Piece::new(Color::White, PieceKind::Pawn))
        );
        assert_eq!(after.fen(), "rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq e3 0 1");
    }

    #[test]
    fn castling_moves_rook() {
        let b = Board::from_fen("r3k2r/8/8/8/8/8/8/R3K2R w KQkq - 0 1").unwrap();
        let after = b.apply_move("e1g1".parse().unwrap()).unwrap();
        assert_eq!(after.piece_at("f1".parse().unwrap()), Some(Piece::new(Color::White, PieceKind::Rook)));
        assert_eq!(after.piece_at("h1".parse().unwrap()), None);
        assert!(!after.castling().has(Color::White, CastleSide::King));
        assert!(!after.castling().has(Color::White, CastleSide::Queen));
        assert!(after.castling().has(Color::Black, CastleSide::Queen));
        let after = after.apply_move("e8c8".parse().unwrap()).unwrap();
        assert_eq!(after.piece_at("d8".parse().unwrap()), Some(Piece::new(Color::Black, PieceKind::Rook)));
    }

    #[test]
    fn illegal_move_names_move() {
        let err = Board::start().apply_move("e2e5".parse().unwrap()).unwrap_err();
        assert!(err.to_string().contains("e2e5"));
    }

    #[test]
    fn uci_syntax() {
        assert_eq!(Move::from_uci("e7e8q").unwrap().promotion, Some(PieceKind::Queen));
        for bad in ["e7e8k", "e7e7", "e2", "e2e4qq", "z2e4", "e7e8Q"] {
            assert!(Move::from_uci(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn mirrored_position_has_mirrored_moves() {
        let b = Board::from_fen(KIWIPETE).unwrap();
        let m = b.mirrored();
        let mut flipped: Vec<Move> = b.legal_moves().into_iter().map(Move::flipped).collect();
        flipped.sort_unstable();
        assert_eq!(m.legal_moves(), flipped);
    }
}
