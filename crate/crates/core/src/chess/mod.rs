// SPDX-License-Identifier: MIT OR Apache-2.0

//! Chess rules, orientation and input encoding.

pub mod attacks;
mod board;
pub mod encode;
mod movegen;
mod square;

pub use board::{Board, CastleSide, CastlingRights, Orientation, START_FEN};
pub use encode::{encode_input, positional_vector, reachability_mask, InputPlanes, LayoutDescriptor};
pub use movegen::Move;
pub use square::{Color, Piece, PieceKind, Square};
