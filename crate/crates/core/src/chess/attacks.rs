// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attack tables. Sliding attacks walk precomputed rays and stop at the
//! first blocker found with a bit scan.

use std::sync::LazyLock;

use super::square::{Color, Square};

const KNIGHT_DELTAS: [(i8, i8); 8] = [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)];
const KING_DELTAS: [(i8, i8); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

// Direction order matters: the first four increase the square index.
const DIRECTIONS: [(i8, i8); 8] = [(0, 1), (1, 1), (1, 0), (-1, 1), (0, -1), (-1, -1), (-1, 0), (1, -1)];
const ROOK_DIRS: [usize; 4] = [0, 2, 4, 6];
const BISHOP_DIRS: [usize; 4] = [1, 3, 5, 7];

struct Tables {
    knight: [u64; 64],
    king: [u64; 64],
    pawn: [[u64; 64]; 2],
    rays: [[u64; 64]; 8],
}

fn step_mask(sq: usize, deltas: &[(i8, i8)]) -> u64 {
    let s = Square::from_index(sq);
    deltas
        .iter()
        .filter_map(|&(df, dr)| s.offset(df, dr))
        .fold(0, |acc, t| acc | t.bit())
}

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let mut t = Tables {
        knight: [0; 64],
        king: [0; 64],
        pawn: [[0; 64]; 2],
        rays: [[0; 64]; 8],
    };
    for sq in 0..64 {
        t.knight[sq] = step_mask(sq, &KNIGHT_DELTAS);
        t.king[sq] = step_mask(sq, &KING_DELTAS);
        t.pawn[Color::White.index()][sq] = step_mask(sq, &[(-1, 1), (1, 1)]);
        t.pawn[Color::Black.index()][sq] = step_mask(sq, &[(-1, -1), (1, -1)]);
        for (d, &(df, dr)) in DIRECTIONS.iter().enumerate() {
            let mut cur = Square::from_index(sq);
            let mut mask = 0;
            while let Some(next) = cur.offset(df, dr) {
                mask |= next.bit();
                cur = next;
            }
            t.rays[d][sq] = mask;
        }
    }
    t
});

#[inline]
pub fn knight(sq: Square) -> u64 {
    TABLES.knight[sq.index()]
}

#[inline]
pub fn king(sq: Square) -> u64 {
    TABLES.king[sq.index()]
}

/// Squares attacked by a pawn of `color` standing on `sq`.
#[inline]
pub fn pawn(color: Color, sq: Square) -> u64 {
    TABLES.pawn[color.index()][sq.index()]
}

#[inline]
fn ray_attacks(dir: usize, sq: Square, occupied: u64) -> u64 {
    let ray = TABLES.rays[dir][sq.index()];
    let blockers = ray & occupied;
    if blockers == 0 {
        return ray;
    }
    let first = if dir < 4 {
        blockers.trailing_zeros()
    } else {
        63 - blockers.leading_zeros()
    };
    ray ^ TABLES.rays[dir][first as usize]
}

pub fn rook(sq: Square, occupied: u64) -> u64 {
    ROOK_DIRS.iter().fold(0, |acc, &d| acc | ray_attacks(d, sq, occupied))
}

pub fn bishop(sq: Square, occupied: u64) -> u64 {
    BISHOP_DIRS.iter().fold(0, |acc, &d| acc | ray_attacks(d, sq, occupied))
}

pub fn queen(sq: Square, occupied: u64) -> u64 {
    rook(sq, occupied) | bishop(sq, occupied)
}
