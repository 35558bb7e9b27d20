// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use super::attacks;
use super::square::{squares_of, Color, Piece, PieceKind, Square};
use crate::error::{Error, Result};

pub const START_FEN: &str = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

const RANK_1: u64 = 0xff;
const RANK_8: u64 = 0xff << 56;

/// Castling rights as four flags.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub struct CastlingRights(u8);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum CastleSide {
    King,
    Queen,
}

impl CastlingRights {
    pub const NONE: CastlingRights = CastlingRights(0);
    pub const ALL: CastlingRights = CastlingRights(0b1111);

    const fn flag(color: Color, side: CastleSide) -> u8 {
        let base = match side {
            CastleSide::King => 1,
            CastleSide::Queen => 2,
        };
        match color {
            Color::White => base,
            Color::Black => base << 2,
        }
    }

    pub fn has(self, color: Color, side: CastleSide) -> bool {
        self.0 & Self::flag(color, side) != 0
    }

    pub fn set(&mut self, color: Color, side: CastleSide, on: bool) {
        if on {
            self.0 |= Self::flag(color, side);
        } else {
            self.0 &= !Self::flag(color, side);
        }
    }

    pub fn clear_color(&mut self, color: Color) {
        self.set(color, CastleSide::King, false);
        self.set(color, CastleSide::Queen, false);
    }

    fn swapped(self) -> CastlingRights {
        CastlingRights(((self.0 & 0b11) << 2) | ((self.0 >> 2) & 0b11))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Frame the board's squares are expressed in.
///
/// In the player-relative frame the side to move always occupies the low
/// ranks and its pieces live in the [`Color::White`] slot; `flipped` records
/// whether getting there required mirroring (black to move).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Orientation {
    Absolute,
    PlayerRelative { flipped: bool },
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Board {
    pieces: [[u64; 6]; 2],
    side_to_move: Color,
    castling: CastlingRights,
    en_passant: Option<Square>,
    halfmove_clock: u32,
    fullmove_number: u32,
    orientation: Orientation,
}

impl Board {
    pub fn empty() -> Board {
        Board {
            pieces: [[0; 6]; 2],
            side_to_move: Color::White,
            castling: CastlingRights::NONE,
            en_passant: None,
            halfmove_clock: 0,
            fullmove_number: 1,
            orientation: Orientation::Absolute,
        }
    }

    pub fn start() -> Board {
        Board::from_fen(START_FEN).expect("start FEN is valid")
    }

    /// Parses a FEN record. The four placement/side/castling/en-passant
    /// fields are required; the two clocks default to `0 1`.
    pub fn from_fen(text: &str) -> Result<Board> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if !(4..=6).contains(&fields.len()) {
            return Err(Error::Fen {
                field: 0,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let mut board = Board::empty();

        let ranks: Vec<&str> = fields[0].split('/').collect();
        if ranks.len() != 8 {
            return Err(Error::Fen {
                field: 1,
                message: format!("found {} ranks, expected 8", ranks.len()),
            });
        }
        for (i, rank_text) in ranks.iter().enumerate() {
            let rank = 7 - i as u8;
            let mut file = 0u8;
            for c in rank_text.chars() {
                if let Some(d) = c.to_digit(10) {
                    if !(1..=8).contains(&d) {
                        return Err(Error::Fen {
                            field: 1,
                            message: format!("bad empty-square count {c:?} on rank {}", rank + 1),
                        });
                    }
                    file += d as u8;
                } else {
                    let piece = Piece::from_fen_char(c).ok_or_else(|| Error::Fen {
                        field: 1,
                        message: format!("invalid piece letter {c:?}"),
                    })?;
                    if file >= 8 {
                        return Err(Error::Fen {
                            field: 1,
                            message: format!("rank {} has more than 8 files", rank + 1),
                        });
                    }
                    board.put(Square::from_coords(file, rank).unwrap(), piece);
                    file += 1;
                }
                if file > 8 {
                    return Err(Error::Fen {
                        field: 1,
                        message: format!("rank {} has more than 8 files", rank + 1),
                    });
                }
            }
            if file != 8 {
                return Err(Error::Fen {
                    field: 1,
                    message: format!("rank {} has {file} files", rank + 1),
                });
            }
        }

        board.side_to_move = match fields[1] {
            "w" => Color::White,
            "b" => Color::Black,
            other => {
                return Err(Error::Fen {
                    field: 2,
                    message: format!("side to move must be w or b, got {other:?}"),
                })
            }
        };

        if fields[2] != "-" {
            for c in fields[2].chars() {
                let (color, side) = match c {
                    'K' => (Color::White, CastleSide::King),
                    'Q' => (Color::White, CastleSide::Queen),
                    'k' => (Color::Black, CastleSide::King),
                    'q' => (Color::Black, CastleSide::Queen),
                    other => {
                        return Err(Error::Fen {
                            field: 3,
                            message: format!("invalid castling flag {other:?}"),
                        })
                    }
                };
                board.castling.set(color, side, true);
            }
        }

        if fields[3] != "-" {
            let sq: Square = fields[3].parse().map_err(|_| Error::Fen {
                field: 4,
                message: format!("bad en-passant square {:?}", fields[3]),
            })?;
            let expected_rank = match board.side_to_move {
                Color::White => 5,
                Color::Black => 2,
            };
            if sq.rank() != expected_rank {
                return Err(Error::Fen {
                    field: 4,
                    message: format!("en-passant square {sq} on the wrong rank"),
                });
            }
            board.en_passant = Some(sq);
        }

        if let Some(t) = fields.get(4) {
            board.halfmove_clock = t.parse().map_err(|_| Error::Fen {
                field: 5,
                message: format!("bad halfmove clock {t:?}"),
            })?;
        }
        if let Some(t) = fields.get(5) {
            board.fullmove_number = t.parse().map_err(|_| Error::Fen {
                field: 6,
                message: format!("bad fullmove number {t:?}"),
            })?;
        }

        board.validate()?;
        board.sanitize_rights();
        Ok(board)
    }

    pub fn fen(&self) -> String {
        let mut out = String::with_capacity(90);
        for rank in (0..8u8).rev() {
            let mut empty = 0;
            for file in 0..8u8 {
                match self.piece_at(Square::from_coords(file, rank).unwrap()) {
                    Some(p) => {
                        if empty > 0 {
                            out.push(char::from(b'0' + empty));
                            empty = 0;
                        }
                        out.push(p.fen_char());
                    }
                    None => empty += 1,
                }
            }
            if empty > 0 {
                out.push(char::from(b'0' + empty));
            }
            if rank > 0 {
                out.push('/');
            }
        }
        out.push(' ');
        out.push(match self.side_to_move {
            Color::White => 'w',
            Color::Black => 'b',
        });
        out.push(' ');
        let mut any = false;
        for (color, side, c) in [
            (Color::White, CastleSide::King, 'K'),
            (Color::White, CastleSide::Queen, 'Q'),
            (Color::Black, CastleSide::King, 'k'),
            (Color::Black, CastleSide::Queen, 'q'),
        ] {
            if self.castling.has(color, side) {
                out.push(c);
                any = true;
            }
        }
        if !any {
            out.push('-');
        }
        match self.en_passant {
            Some(sq) => out.push_str(&format!(" {sq}")),
            None => out.push_str(" -"),
        }
        out.push_str(&format!(" {} {}", self.halfmove_clock, self.fullmove_number));
        out
    }

    /// Checks the structural invariants: one king per colour, no pawns on the
    /// back ranks, and the side not to move is not in check.
    pub fn validate(&self) -> Result<()> {
        for color in Color::BOTH {
            let kings = self.pieces[color.index()][PieceKind::King.index()].count_ones();
            if kings != 1 {
                return Err(Error::Fen {
                    field: 1,
                    message: format!("{color:?} has {kings} kings"),
                });
            }
        }
        if self.kind_bb(PieceKind::Pawn) & (RANK_1 | RANK_8) != 0 {
            return Err(Error::Fen {
                field: 1,
                message: "pawn on the first or last rank".into(),
            });
        }
        if self.is_in_check(self.side_to_move.other()) {
            return Err(Error::Fen {
                field: 2,
                message: "side not to move is in check".into(),
            });
        }
        Ok(())
    }

    /// Whether the invariants of [`Board::validate`] hold.
    pub fn is_legal_position(&self) -> bool {
        self.validate().is_ok()
    }

    /// Drops castling rights whose king or rook has left its home square and
    /// an en-passant square that no longer corresponds to a double push.
    pub fn sanitize_rights(&mut self) {
        for color in Color::BOTH {
            let back = match color {
                Color::White => 0u8,
                Color::Black => 7u8,
            };
            let king_home = Square::from_coords(4, back).unwrap();
            if self.piece_at(king_home) != Some(Piece::new(color, PieceKind::King)) {
                self.castling.clear_color(color);
                continue;
            }
            for (side, file) in [(CastleSide::King, 7u8), (CastleSide::Queen, 0u8)] {
                let rook_home = Square::from_coords(file, back).unwrap();
                if self.piece_at(rook_home) != Some(Piece::new(color, PieceKind::Rook)) {
                    self.castling.set(color, side, false);
                }
            }
        }
        if let Some(ep) = self.en_passant {
            // The pawn that just moved sits one rank beyond the ep square.
            let (pusher, pawn_sq, origin) = match self.side_to_move {
                Color::White => (Color::Black, ep.offset(0, -1), ep.offset(0, 1)),
                Color::Black => (Color::White, ep.offset(0, 1), ep.offset(0, -1)),
            };
            let ok = match (pawn_sq, origin) {
                (Some(p), Some(o)) => {
                    self.piece_at(p) == Some(Piece::new(pusher, PieceKind::Pawn))
                        && self.piece_at(ep).is_none()
                        && self.piece_at(o).is_none()
                }
                _ => false,
            };
            if !ok {
                self.en_passant = None;
            }
        }
    }

    #[inline]
    pub fn side_to_move(&self) -> Color {
        self.side_to_move
    }

    #[inline]
    pub fn castling(&self) -> CastlingRights {
        self.castling
    }

    #[inline]
    pub fn en_passant(&self) -> Option<Square> {
        self.en_passant
    }

    #[inline]
    pub fn halfmove_clock(&self) -> u32 {
        self.halfmove_clock
    }

    #[inline]
    pub fn fullmove_number(&self) -> u32 {
        self.fullmove_number
    }

    #[inline]
    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// The actual colour of the player to move, in either frame.
    pub fn player_color(&self) -> Color {
        match self.orientation {
            Orientation::Absolute => self.side_to_move,
            Orientation::PlayerRelative { flipped: false } => self.side_to_move,
            Orientation::PlayerRelative { flipped: true } => self.side_to_move.other(),
        }
    }

    #[inline]
    pub fn pieces(&self, color: Color, kind: PieceKind) -> u64 {
        self.pieces[color.index()][kind.index()]
    }

    #[inline]
    pub fn color_bb(&self, color: Color) -> u64 {
        self.pieces[color.index()].iter().fold(0, |a, &b| a | b)
    }

    #[inline]
    pub fn kind_bb(&self, kind: PieceKind) -> u64 {
        self.pieces[0][kind.index()] | self.pieces[1][kind.index()]
    }

    #[inline]
    pub fn occupied(&self) -> u64 {
        self.color_bb(Color::White) | self.color_bb(Color::Black)
    }

    /// The 12 occupancy sets, `[color][kind]`.
    pub fn placement(&self) -> [[u64; 6]; 2] {
        self.pieces
    }

    pub fn piece_at(&self, sq: Square) -> Option<Piece> {
        let bit = sq.bit();
        for color in Color::BOTH {
            for kind in PieceKind::ALL {
                if self.pieces[color.index()][kind.index()] & bit != 0 {
                    return Some(Piece::new(color, kind));
                }
            }
        }
        None
    }

    pub fn piece_count(&self) -> u32 {
        self.occupied().count_ones()
    }

    pub fn king_square(&self, color: Color) -> Square {
        let bb = self.pieces(color, PieceKind::King);
        Square::from_index(bb.trailing_zeros() as usize)
    }

    /// Places `piece` on `sq`, removing whatever stood there.
    pub fn put(&mut self, sq: Square, piece: Piece) {
        self.remove(sq);
        self.pieces[piece.color.index()][piece.kind.index()] |= sq.bit();
    }

    pub fn remove(&mut self, sq: Square) -> Option<Piece> {
        let found = self.piece_at(sq)?;
        self.pieces[found.color.index()][found.kind.index()] &= !sq.bit();
        Some(found)
    }

    pub(crate) fn set_side_to_move(&mut self, color: Color) {
        self.side_to_move = color;
    }

    pub(crate) fn set_en_passant(&mut self, sq: Option<Square>) {
        self.en_passant = sq;
    }

    pub(crate) fn set_clocks(&mut self, halfmove: u32, fullmove: u32) {
        self.halfmove_clock = halfmove;
        self.fullmove_number = fullmove;
    }

    /// Is `sq` attacked by any piece of colour `by`?
    pub fn is_attacked(&self, sq: Square, by: Color) -> bool {
        let occ = self.occupied();
        let p = &self.pieces[by.index()];
        if attacks::knight(sq) & p[PieceKind::Knight.index()] != 0 {
            return true;
        }
        if attacks::king(sq) & p[PieceKind::King.index()] != 0 {
            return true;
        }
        // A pawn of `by` attacks sq iff a pawn of the other colour on sq would attack it.
        if attacks::pawn(by.other(), sq) & p[PieceKind::Pawn.index()] != 0 {
            return true;
        }
        let queens = p[PieceKind::Queen.index()];
        if attacks::rook(sq, occ) & (p[PieceKind::Rook.index()] | queens) != 0 {
            return true;
        }
        attacks::bishop(sq, occ) & (p[PieceKind::Bishop.index()] | queens) != 0
    }

    pub fn is_in_check(&self, color: Color) -> bool {
        let kings = self.pieces(color, PieceKind::King);
        if kings == 0 {
            return false;
        }
        self.is_attacked(Square::from_index(kings.trailing_zeros() as usize), color.other())
    }

    /// Vertical flip with colours swapped. An involution that preserves
    /// legality; the orientation tag is left untouched.
    pub fn mirrored(&self) -> Board {
        let mut pieces = [[0u64; 6]; 2];
        for kind in PieceKind::ALL {
            pieces[0][kind.index()] = self.pieces[1][kind.index()].swap_bytes();
            pieces[1][kind.index()] = self.pieces[0][kind.index()].swap_bytes();
        }
        Board {
            pieces,
            side_to_move: self.side_to_move.other(),
            castling: self.castling.swapped(),
            en_passant: self.en_passant.map(Square::flip_vertical),
            halfmove_clock: self.halfmove_clock,
            fullmove_number: self.fullmove_number,
            orientation: self.orientation,
        }
    }

    /// Re-expresses the board so the side to move sits on the low ranks and
    /// owns the [`Color::White`] slot. Already oriented boards are returned
    /// unchanged.
    pub fn orient_to_player(&self) -> Board {
        match self.orientation {
            Orientation::PlayerRelative { .. } => self.clone(),
            Orientation::Absolute => {
                let (mut b, flipped) = match self.side_to_move {
                    Color::White => (self.clone(), false),
                    Color::Black => (self.mirrored(), true),
                };
                b.orientation = Orientation::PlayerRelative { flipped };
                b
            }
        }
    }

    /// Inverse of [`Board::orient_to_player`].
    pub fn to_absolute(&self) -> Board {
        match self.orientation {
            Orientation::Absolute => self.clone(),
            Orientation::PlayerRelative { flipped } => {
                let mut b = if flipped { self.mirrored() } else { self.clone() };
                b.orientation = Orientation::Absolute;
                b
            }
        }
    }

    /// Maps an absolute square into this position's player frame.
    pub fn to_player_frame(&self, sq: Square) -> Square {
        if self.player_color() == Color::Black {
            sq.flip_vertical()
        } else {
            sq
        }
    }

    /// Inverse of [`Board::to_player_frame`] (the map is an involution).
    pub fn to_absolute_frame(&self, sq: Square) -> Square {
        self.to_player_frame(sq)
    }

    pub fn iter_pieces(&self) -> impl Iterator<Item = (Square, Piece)> + '_ {
        Color::BOTH.into_iter().flat_map(move |color| {
            PieceKind::ALL.into_iter().flat_map(move |kind| {
                squares_of(self.pieces(color, kind)).map(move |sq| (sq, Piece::new(color, kind)))
            })
        })
    }
}

impl Default for Board {
    fn default() -> Self {
        Board::start()
    }
}

impl fmt::Debug for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Board({:?} {})", self.orientation, self.fen())
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fen())
    }
}
