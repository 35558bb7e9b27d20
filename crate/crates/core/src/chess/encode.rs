// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model input encoding: one token per square, each carrying the piece
//! planes, constant auxiliary channels and a 64-bit reachability vector.

use serde::{Deserialize, Serialize};

use super::attacks;
use super::board::{Board, CastleSide, Orientation};
use super::square::{Color, PieceKind, Square};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Ours,
    Theirs,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct PiecePlane {
    pub owner: Owner,
    pub kind: PieceKind,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryFill {
    #[default]
    Zeros,
    RepeatCurrent,
}

/// A channel that takes the same value on every square.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxChannel {
    OurQueenside,
    OurKingside,
    TheirQueenside,
    TheirKingside,
    /// 1 when the actual colour to move is black.
    SideToMoveBlack,
    Rule50 { scale: f32 },
    HasEnPassant,
    Zeros,
    Ones,
}

/// Describes how a board becomes the model's per-square input vector.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    pub piece_planes: Vec<PiecePlane>,
    #[serde(default)]
    pub repetition_plane: bool,
    #[serde(default)]
    pub history_slots: usize,
    #[serde(default)]
    pub history_fill: HistoryFill,
    #[serde(default)]
    pub aux: Vec<AuxChannel>,
    #[serde(default = "yes")]
    pub positional: bool,
}

fn yes() -> bool {
    true
}

impl Default for LayoutDescriptor {
    /// Ours P N B R Q K then theirs, four castling channels, positional bits.
    fn default() -> Self {
        let piece_planes = [Owner::Ours, Owner::Theirs]
            .into_iter()
            .flat_map(|owner| PieceKind::ALL.into_iter().map(move |kind| PiecePlane { owner, kind }))
            .collect();
        LayoutDescriptor {
            piece_planes,
            repetition_plane: false,
            history_slots: 0,
            history_fill: HistoryFill::Zeros,
            aux: vec![
                AuxChannel::OurQueenside,
                AuxChannel::OurKingside,
                AuxChannel::TheirQueenside,
                AuxChannel::TheirKingside,
            ],
            positional: true,
        }
    }
}

impl LayoutDescriptor {
    fn planes_per_slot(&self) -> usize {
        self.piece_planes.len() + usize::from(self.repetition_plane)
    }

    /// Channels other than the positional bits.
    pub fn channel_count(&self) -> usize {
        self.planes_per_slot() * (1 + self.history_slots) + self.aux.len()
    }

    /// Length of one square's input vector.
    pub fn input_width(&self) -> usize {
        self.channel_count() + if self.positional { 64 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.piece_planes.is_empty() {
            return Err(Error::Layout("layout has no piece planes".into()));
        }
        for (i, p) in self.piece_planes.iter().enumerate() {
            if self.piece_planes[..i].contains(p) {
                return Err(Error::Layout(format!("duplicate piece plane {p:?}")));
            }
        }
        Ok(())
    }
}

/// Encoded input for one board, laid out channel-major.
#[derive(Clone, PartialEq, Debug)]
pub struct InputPlanes {
    /// `channel_count * 64` values; channel `c` of square `q` is `planes[c * 64 + q]`.
    pub planes: Vec<f32>,
    pub channels: usize,
    /// `positional[q]` has bit `r` set iff some piece kind reaches `r` from `q`.
    pub positional: Option<[u64; 64]>,
}

impl InputPlanes {
    pub fn width(&self) -> usize {
        self.channels + if self.positional.is_some() { 64 } else { 0 }
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        &self.planes[channel * 64..(channel + 1) * 64]
    }

    /// Row-major `64 × width` token matrix, ready for the embedding.
    pub fn token_matrix(&self) -> Vec<f32> {
        let w = self.width();
        let mut out = vec![0f32; 64 * w];
        for q in 0..64 {
            let row = &mut out[q * w..(q + 1) * w];
            for c in 0..self.channels {
                row[c] = self.planes[c * 64 + q];
            }
            if let Some(pos) = &self.positional {
                for r in 0..64 {
                    if pos[q] >> r & 1 == 1 {
                        row[self.channels + r] = 1.0;
                    }
                }
            }
        }
        out
    }
}

/// Squares reachable from `square` by `kind` in one move on an empty board.
/// Pawns move toward higher ranks (the player frame).
pub fn reachability_mask(square: Square, kind: PieceKind) -> u64 {
    match kind {
        PieceKind::Knight => attacks::knight(square),
        PieceKind::Bishop => attacks::bishop(square, 0),
        PieceKind::Rook => attacks::rook(square, 0),
        PieceKind::Queen => attacks::queen(square, 0),
        PieceKind::King => attacks::king(square),
        PieceKind::Pawn => {
            let mut m = attacks::pawn(Color::White, square);
            if let Some(one) = square.offset(0, 1) {
                m |= one.bit();
                if square.rank() == 1 {
                    m |= one.offset(0, 1).unwrap().bit();
                }
            }
            m
        }
    }
}

pub fn positional_vector(square: Square) -> u64 {
    PieceKind::ALL
        .into_iter()
        .fold(0, |acc, k| acc | reachability_mask(square, k))
}

/// Encodes `board` under `layout`. Absolute boards are oriented first.
pub fn encode_input(board: &Board, layout: &LayoutDescriptor) -> InputPlanes {
    let oriented;
    let b = match board.orientation() {
        Orientation::Absolute => {
            oriented = board.orient_to_player();
            &oriented
        }
        Orientation::PlayerRelative { .. } => board,
    };
    let channels = layout.channel_count();
    let mut planes = vec![0f32; channels * 64];

    let mut current = Vec::with_capacity(layout.planes_per_slot() * 64);
    for p in &layout.piece_planes {
        let color = match p.owner {
            Owner::Ours => Color::White,
            Owner::Theirs => Color::Black,
        };
        let bb = b.pieces(color, p.kind);
        current.extend((0..64).map(|q| (bb >> q & 1) as f32));
    }
    if layout.repetition_plane {
        current.extend(std::iter::repeat_n(0f32, 64));
    }
    planes[..current.len()].copy_from_slice(&current);
    let mut offset = current.len();
    for _ in 0..layout.history_slots {
        if layout.history_fill == HistoryFill::RepeatCurrent {
            planes[offset..offset + current.len()].copy_from_slice(&current);
        }
        offset += current.len();
    }

    let rights = b.castling();
    for aux in &layout.aux {
        let value = match *aux {
            AuxChannel::OurQueenside => f32::from(u8::from(rights.has(Color::White, CastleSide::Queen))),
            AuxChannel::OurKingside => f32::from(u8::from(rights.has(Color::White, CastleSide::King))),
            AuxChannel::TheirQueenside => f32::from(u8::from(rights.has(Color::Black, CastleSide::Queen))),
            AuxChannel::TheirKingside => f32::from(u8::from(rights.has(Color::Black, CastleSide::King))),
            AuxChannel::SideToMoveBlack => f32::from(u8::from(b.player_color() == Color::Black)),
            AuxChannel::Rule50 { scale } => b.halfmove_clock() as f32 * scale,
            AuxChannel::HasEnPassant => f32::from(u8::from(b.en_passant().is_some())),
            AuxChannel::Zeros => 0.0,
            AuxChannel::Ones => 1.0,
        };
        planes[offset..offset + 64].fill(value);
        offset += 64;
    }
    debug_assert_eq!(offset, channels * 64);

    let positional = layout.positional.then(|| {
        let mut pos = [0u64; 64];
        for (q, slot) in pos.iter_mut().enumerate() {
            *slot = positional_vector(Square::from_index(q));
        }
        pos
    });
    InputPlanes { planes, channels, positional }
}
