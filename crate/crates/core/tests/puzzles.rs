// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;
use std::io::Write;

use lookahead::chess::{Board, Move};
use lookahead::model::{Evaluation, MoveDist, PolicyModel};
use lookahead::puzzles::{
    filter_puzzle, ingest_lichess_csv, limit_by_id, load_dataset, save_dataset, train_eval_split, FilterVerdict,
    PuzzleRecord, PuzzleThresholds, SetupMove, Subsplit,
};
use lookahead::{Error, Result};

fn mv(s: &str) -> Move {
    s.parse().unwrap()
}

const HEADER: &str = "PuzzleId,FEN,Moves,Rating,RatingDeviation,Popularity,NbPlays,Themes,GameUrl,OpeningTags";

fn write_csv(rows: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "{HEADER}").unwrap();
    for r in rows {
        writeln!(f, "{r}").unwrap();
    }
    f
}

#[test]
fn ingest_counts_every_row() {
    let f = write_csv(&[
        // setup move e7e5 then a three-move PV for white
        "a1,rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1,e7e5 g1f3 b8c6 f1c4,1500,75,90,100,opening,u,",
        "a2,not a fen,e7e5 g1f3 b8c6 f1c4,1500,75,90,100,x,u,",
        "a3,rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1,e7e5 g1f3,1500,75,90,100,x,u,",
        "a4,rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1,e2e4 g1f3 b8c6 f1c4,1500,75,90,100,x,u,",
        "a5,rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1,e7e5 g1f3 b8c6 f1c5,1500,75,90,100,x,u,",
        "a6,rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1,e7e5 g1f3 b8c6 f1c4,abc,75,90,100,x,u,",
        "a7,only-two-fields",
    ]);
    let (recs, report) = ingest_lichess_csv(f.path(), SetupMove::ApplyFirst).unwrap();
    assert_eq!(report.rows, 7);
    assert_eq!(report.kept, 1);
    assert_eq!(report.rows, report.kept + report.skipped.values().sum::<usize>());
    for reason in ["bad-fen", "short-pv", "illegal-setup", "illegal-pv", "bad-rating", "missing-field"] {
        assert_eq!(report.skipped.get(reason), Some(&1), "{reason}: {:?}", report.skipped);
    }
    let r = &recs[0];
    assert_eq!(r.id, "a1");
    assert_eq!(r.pv, vec![mv("g1f3"), mv("b8c6"), mv("f1c4")]);
    assert_eq!(r.board().unwrap().side_to_move(), lookahead::chess::Color::White);

    // the same row read as an already-started puzzle
    let (recs, _) = ingest_lichess_csv(f.path(), SetupMove::Keep).unwrap();
    assert!(recs.iter().all(|r| r.id != "a1" || r.pv[0] == mv("e7e5")));
}

#[test]
fn ingest_rejects_wrong_header_and_missing_file() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "id,fen,moves").unwrap();
    assert!(matches!(ingest_lichess_csv(f.path(), SetupMove::Keep), Err(Error::Dataset(m)) if m.contains("header mismatch")));
    let missing = std::path::Path::new("/nonexistent/puzzles.csv");
    assert!(matches!(ingest_lichess_csv(missing, SetupMove::Keep), Err(Error::MissingInput(p)) if p == missing));
}

/// Gives `move` a fixed probability on the board it is legal on; the rest
/// is spread evenly.
struct Scripted {
    probs: HashMap<String, (Move, f64)>,
}

impl PolicyModel for Scripted {
    fn evaluate(&self, board: &Board) -> Result<Evaluation> {
        let moves = board.legal_moves();
        let key = board.fen();
        let dist = match self.probs.get(&key) {
            Some(&(m, p)) => {
                let rest = (1.0 - p) / (moves.len() - 1) as f64;
                MoveDist::new(moves.iter().map(|&x| (x, if x == m { p } else { rest })).collect())
            }
            None => MoveDist::new(moves.iter().map(|&x| (x, 1.0 / moves.len() as f64)).collect()),
        };
        Ok(Evaluation { dist, value: 0.0 })
    }

    fn fingerprint(&self) -> String {
        "scripted".into()
    }
}

fn script(rec: &PuzzleRecord, probs: &[f64]) -> Scripted {
    let mut map = HashMap::new();
    let mut b = rec.board().unwrap();
    for (m, p) in rec.pv.iter().zip(probs) {
        map.insert(b.fen(), (*m, *p));
        b = b.apply_move(*m).unwrap();
    }
    Scripted { probs: map }
}

fn sample_puzzle() -> PuzzleRecord {
    PuzzleRecord::new(
        "p",
        "r1bqkbnr/pppp1ppp/2n5/4p3/4P3/5N2/PPPP1PPP/RNBQKB1R w KQkq - 2 3",
        vec![mv("f1c4"), mv("g8f6"), mv("f3g5"), mv("d7d5"), mv("e4d5")],
        1500,
    )
    .unwrap()
}

#[test]
fn filter_thresholds_are_strict_where_stated() {
    let rec = sample_puzzle();
    let th = PuzzleThresholds::default();
    let strong_ok = script(&rec, &[0.9, 0.9, 0.9, 0.9, 0.9]);
    let keep = |weak: &[f64], strong: &Scripted| filter_puzzle(strong, &script(&rec, weak), &rec, &th).unwrap();

    assert_eq!(keep(&[0.05, 0.9, 0.05, 0.0, 0.05], &strong_ok), FilterVerdict::Keep);
    // weak model too sure of a player move
    assert_eq!(
        keep(&[0.05, 0.9, 0.11, 0.0, 0.05], &strong_ok),
        FilterVerdict::Discard { reason: "weak-too-strong".into(), move_index: 3 }
    );
    // ... including the fifth move
    assert!(matches!(keep(&[0.05, 0.9, 0.05, 0.0, 0.11], &strong_ok), FilterVerdict::Discard { move_index: 5, .. }));
    // opponent reply not forcing for the weak model
    assert_eq!(
        keep(&[0.05, 0.49, 0.05, 0.0, 0.05], &strong_ok),
        FilterVerdict::Discard { reason: "opponent-not-forcing".into(), move_index: 2 }
    );
    // later opponent moves are not tested
    assert_eq!(keep(&[0.05, 0.9, 0.05, 0.01, 0.05], &strong_ok), FilterVerdict::Keep);
    // strong model unsure of a player move
    let strong_weak = script(&rec, &[0.9, 0.9, 0.49, 0.9, 0.9]);
    assert_eq!(
        keep(&[0.05, 0.9, 0.05, 0.0, 0.05], &strong_weak),
        FilterVerdict::Discard { reason: "strong-too-weak".into(), move_index: 3 }
    );
}

#[test]
fn dataset_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let a = sample_puzzle();
    let mut b = PuzzleRecord::new("b", "4k3/8/4p3/8/8/8/8/3QK3 w - - 0 1", vec![mv("d1d5"), mv("e6d5"), mv("e1e2")], 900).unwrap();
    b.corruption = lookahead::corruption::generate_candidates(&b.board().unwrap()).into_iter().next();
    save_dataset(&path, &[b.clone(), a.clone()]).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), vec![b.clone(), a.clone()]);
    let text = std::fs::read_to_string(&path).unwrap();

    let tampered = text.replace("\"same_target\"", "\"different_target\"");
    assert_ne!(tampered, text);
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Dataset(_))));

    std::fs::write(&path, text.replace("\"version\":1", "\"version\":2")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Dataset(m)) if m.contains("v2")));

    std::fs::write(&path, text.replace("\"count\":2", "\"count\":3")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Dataset(_))));
}

#[test]
fn frames_of_pv_squares() {
    // black to move: player moves 1 and 3 share the start frame
    let rec = PuzzleRecord::new(
        "k",
        "r1bqkbnr/pppp1ppp/2n5/4p3/2B1P3/5N2/PPPP1PPP/RNBQK2R b KQkq - 3 3",
        vec![mv("g8f6"), mv("f3g5"), mv("d7d5")],
        1200,
    )
    .unwrap();
    let start = rec.board().unwrap();
    for j in 1..=3 {
        let st = rec.state(j).unwrap();
        assert_eq!(rec.t(j), st.to_player_frame(rec.pv[j - 1].target));
        assert_eq!(rec.s(j), st.to_player_frame(rec.pv[j - 1].source));
    }
    assert_eq!(rec.t(1), start.to_player_frame("f6".parse().unwrap()));
    assert_eq!(rec.t(1).to_string(), "f3");
    assert_eq!(rec.t(3).to_string(), "d4");
    // the opponent's move is stored in its own frame (white, absolute)
    assert_eq!(rec.t(2).to_string(), "g5");
    assert_eq!(rec.subsplit, Subsplit::DifferentTarget);
}

#[test]
fn limit_and_split_use_ids() {
    let recs: Vec<PuzzleRecord> = ["d", "b", "c", "a", "e"]
        .iter()
        .map(|id| PuzzleRecord::new(*id, &sample_puzzle().fen, sample_puzzle().pv, 1000).unwrap())
        .collect();
    let ids: Vec<String> = limit_by_id(&recs, Some(2)).into_iter().map(|r| r.id).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(limit_by_id(&recs, None).len(), 5);
    let mut rev = recs.clone();
    rev.reverse();
    // input order does not matter
    assert_eq!(train_eval_split(&recs, 0.7, 3), train_eval_split(&rev, 0.7, 3));
    let (t, e) = train_eval_split(&recs, 0.7, 3);
    assert_eq!(t.len() + e.len(), 5);
    assert!(t.iter().all(|x| e.iter().all(|y| x.id != y.id)));
}
