// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use lookahead::chess::{Board, Move};
use lookahead::corruption::{
    find_corruption, generate_candidates, jensen_shannon, select_corruption, CorruptionCandidate, Diagnostics,
    FilterConfig, Mutation,
};
use lookahead::model::synthetic::default_planted_model;
use lookahead::model::{Evaluation, MoveDist, PolicyModel};
use lookahead::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shakmaty::fen::Fen;
use shakmaty::{CastlingMode, Chess, EnPassantMode, FromSetup, Position, Role};

/// Independent enumeration: edit the oracle's board directly and let its
/// own validity rules decide. Material limits are not part of legality here.
fn oracle_candidates(fen: &str) -> BTreeSet<String> {
    let setup = Fen::from_ascii(fen.as_bytes()).unwrap().into_setup();
    let mut out = BTreeSet::new();
    let mut edits: Vec<shakmaty::Setup> = Vec::new();
    for sq in shakmaty::Square::ALL {
        match setup.board.piece_at(sq) {
            None => {
                let back = matches!(sq.rank(), shakmaty::Rank::First | shakmaty::Rank::Eighth);
                for color in [shakmaty::Color::White, shakmaty::Color::Black] {
                    if back {
                        continue;
                    }
                    let mut s = setup.clone();
                    s.board.set_piece_at(sq, shakmaty::Piece { color, role: Role::Pawn });
                    edits.push(s);
                }
            }
            Some(p) if p.role == Role::Pawn => {
                let mut s = setup.clone();
                s.board.discard_piece_at(sq);
                edits.push(s);
            }
            Some(p) => {
                for to in shakmaty::Square::ALL {
                    if setup.board.piece_at(to).is_none() {
                        let mut s = setup.clone();
                        s.board.discard_piece_at(sq);
                        s.board.set_piece_at(to, p);
                        s.ep_square = None;
                        edits.push(s);
                    }
                }
            }
        }
    }
    for s in edits {
        let pos = Chess::from_setup(s, CastlingMode::Standard)
            .or_else(|e| e.ignore_invalid_castling_rights())
            .or_else(|e| e.ignore_invalid_ep_square())
            .or_else(|e| e.ignore_too_much_material())
            .or_else(|e| e.ignore_impossible_check());
        if let Ok(pos) = pos {
            if !pos.legal_moves().is_empty() {
                out.insert(board_part(&Fen::from_position(&pos, EnPassantMode::Legal).to_string()));
            }
        }
    }
    out
}

fn board_part(fen: &str) -> String {
    fen.split(' ').take(2).collect::<Vec<_>>().join(" ")
}

fn ours(fen: &str) -> BTreeSet<String> {
    generate_candidates(&Board::from_fen(fen).unwrap()).iter().map(|c| board_part(&c.fen)).collect()
}

const MIDDLEGAME: &str = "r1bq1rk1/pp2bppp/2n1pn2/3p4/2PP4/2N1PN2/PP2BPPP/R2QKB1R w KQ - 3 9";

#[test]
fn candidates_match_oracle() {
    for fen in [
        "4k3/8/8/8/8/8/8/4K3 w - - 0 1",
        "4k3/8/8/8/8/8/8/4K3 b - - 0 1",
        "r3k2r/8/8/3pP3/8/8/8/R3K2R w KQkq d6 0 2",
        MIDDLEGAME,
    ] {
        let (a, b) = (ours(fen), oracle_candidates(fen));
        assert_eq!(a, b, "{fen}: only ours {:?}, only oracle {:?}", a.difference(&b).collect::<Vec<_>>(), b.difference(&a).collect::<Vec<_>>());
        // no two mutations give the same board
        assert_eq!(generate_candidates(&Board::from_fen(fen).unwrap()).len(), a.len());
    }
}

#[test]
fn middlegame_has_a_few_hundred() {
    let n = generate_candidates(&Board::from_fen(MIDDLEGAME).unwrap()).len();
    assert!((100..1500).contains(&n), "{n}");
}

#[test]
fn candidates_are_sorted_and_replayable() {
    let clean = Board::from_fen(MIDDLEGAME).unwrap();
    let c = generate_candidates(&clean);
    assert!(c.windows(2).all(|w| w[0].mutation < w[1].mutation));
    for x in &c {
        assert_eq!(x.mutation.apply(&clean).unwrap().fen(), x.fen);
        let b = x.board().unwrap();
        let changed: Vec<_> = lookahead::chess::Square::all().filter(|&s| b.piece_at(s) != clean.piece_at(s)).collect();
        let mut want = x.mutation.changed_squares();
        want.sort();
        assert_eq!(changed, want);
    }
    // black to move: candidates are still reported in the absolute frame
    let black = Board::from_fen("4k3/4p3/8/8/8/8/8/4K3 b - - 0 1").unwrap();
    assert!(generate_candidates(&black).iter().any(|c| c.mutation == Mutation::RemovePawn { square: "e7".parse().unwrap() }));
}

fn random_diag(rng: &mut ChaCha8Rng) -> Diagnostics {
    Diagnostics {
        strong_prob: rng.random_range(0.0..0.3),
        weak_log_odds_clean: rng.random_range(-3.0..3.0),
        weak_log_odds_corrupted: rng.random_range(-3.0..3.0),
        strong_value_clean: rng.random_range(-1.0..1.0),
        strong_value_corrupted: rng.random_range(-1.0..1.0),
        weak_jsd: rng.random_range(0.0..std::f64::consts::LN_2),
        best_still_legal: rng.random(),
    }
}

#[test]
fn filter_rules_cross_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = FilterConfig::default();
    for _ in 0..100 {
        let d = random_diag(&mut rng);
        let keep = d.strong_prob < 0.10
            && d.weak_log_odds_clean - d.weak_log_odds_corrupted <= 0.2
            && d.strong_value_corrupted - d.strong_value_clean <= 0.1;
        assert_eq!(cfg.decide(&d).keep(), keep, "{d:?}");
    }
}

#[test]
fn disabling_a_filter_never_drops_survivors() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let diags: Vec<_> = (0..300).map(|_| random_diag(&mut rng)).collect();
    let count = |cfg: &FilterConfig| diags.iter().filter(|d| cfg.decide(d).keep()).count();
    let full = FilterConfig::default();
    let base = count(&full);
    for i in 0..3 {
        let mut c = full.clone();
        match i {
            0 => c.use_strong = false,
            1 => c.use_weak = false,
            _ => c.use_value = false,
        }
        assert!(count(&c) >= base);
    }
    let none = FilterConfig { use_strong: false, use_weak: false, use_value: false, ..full };
    assert_eq!(count(&none), diags.len());
}

#[test]
fn selection_is_brute_force_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clean = Board::from_fen(MIDDLEGAME).unwrap();
    let mut cands = generate_candidates(&clean);
    for c in &mut cands {
        let mut d = random_diag(&mut rng);
        // coarse values force ties
        d.weak_jsd = (d.weak_jsd * 20.0).round() / 20.0;
        c.diagnostics = Some(d);
    }
    let got = select_corruption(&cands).unwrap();
    let min = cands.iter().map(|c| c.diagnostics.as_ref().unwrap().weak_jsd).fold(f64::INFINITY, f64::min);
    let first = cands.iter().find(|c| c.diagnostics.as_ref().unwrap().weak_jsd == min).unwrap();
    assert_eq!(&got, first);
}

/// Uniform over legal moves, value zero.
struct Uniform;

impl PolicyModel for Uniform {
    fn evaluate(&self, board: &Board) -> Result<Evaluation> {
        let moves = board.legal_moves();
        let p = 1.0 / moves.len() as f64;
        Ok(Evaluation { dist: MoveDist::new(moves.into_iter().map(|m| (m, p)).collect()), value: 0.0 })
    }

    fn fingerprint(&self) -> String {
        "uniform".into()
    }
}

#[test]
fn search_on_planted_model() {
    let (m, p) = default_planted_model(7).unwrap();
    let clean = p.clean_board().unwrap();
    let best: Move = p.planted_move();
    let cfg = FilterConfig::default();
    let out = find_corruption(&m, &Uniform, &clean, best, &cfg).unwrap();
    assert_eq!(out.candidates, generate_candidates(&clean).len());
    assert!(out.survivors > 0 && out.survivors < out.candidates);
    let sel: CorruptionCandidate = out.selected.unwrap();
    let d = sel.diagnostics.unwrap();
    assert!(cfg.decide(&d).keep());
    assert!(d.strong_prob < 0.10);
    // removing the carrier pawn is what breaks the planted move
    let carrier = Mutation::RemovePawn { square: p.carrier };
    let cand = generate_candidates(&clean).into_iter().find(|c| c.mutation == carrier).unwrap();
    assert!(m.evaluate(&cand.board().unwrap()).unwrap().dist.prob(best) < 0.10);
}

fn dist_from(ws: &[f64]) -> MoveDist {
    let moves = Board::start().legal_moves();
    MoveDist::new(moves.into_iter().zip(ws.iter().copied()).filter(|(_, w)| *w > 0.0).collect())
}

proptest! {
    #[test]
    fn jsd_is_symmetric_and_bounded(a in prop::collection::vec(0.0f64..1.0, 20), b in prop::collection::vec(0.0f64..1.0, 20)) {
        prop_assume!(a.iter().sum::<f64>() > 1e-3 && b.iter().sum::<f64>() > 1e-3);
        let (p, q) = (dist_from(&a), dist_from(&b));
        let j = jensen_shannon(&p, &q);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&j));
        prop_assert!((j - jensen_shannon(&q, &p)).abs() < 1e-12);
        prop_assert!(jensen_shannon(&p, &p) < 1e-12);
    }
}
