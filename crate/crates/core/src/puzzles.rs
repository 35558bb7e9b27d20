// SPDX-License-Identifier: MIT OR Apache-2.0

//! Puzzle records: CSV ingest, the difficulty filter, subsplits and the
//! versioned JSONL dataset.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chess::{Board, Move, Square};
use crate::corruption::CorruptionCandidate;
use crate::error::{Error, Result};
use crate::model::PolicyModel;

pub const DATASET_FORMAT: &str = "lookahead-puzzles";
pub const DATASET_VERSION: u32 = 1;

/// Source and target of one PV move, in the player frame of the state
/// where that move is played.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MoveSquares {
    pub source: Square,
    pub target: Square,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsplit {
    SameTarget,
    DifferentTarget,
}

impl Subsplit {
    pub fn name(self) -> &'static str {
        match self {
            Subsplit::SameTarget => "same_target",
            Subsplit::DifferentTarget => "different_target",
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PuzzleRecord {
    pub id: String,
    /// Starting state, absolute frame, side to move is the player.
    pub fen: String,
    /// Principal variation in absolute UCI.
    pub pv: Vec<Move>,
    pub rating: i32,
    /// Squares of the first three PV moves.
    pub squares: Vec<MoveSquares>,
    pub subsplit: Subsplit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionCandidate>,
}

/// Shortest allowed principal variation.
pub const MIN_PV: usize = 3;

impl PuzzleRecord {
    /// Validates the PV and derives squares and subsplit.
    pub fn new(id: impl Into<String>, fen: &str, pv: Vec<Move>, rating: i32) -> Result<PuzzleRecord> {
        let id = id.into();
        let board = Board::from_fen(fen)?.to_absolute();
        if pv.len() < MIN_PV {
            return Err(Error::Degenerate { id, reason: format!("principal variation has {} moves", pv.len()) });
        }
        let states = replay(&board, &pv).map_err(|e| Error::Degenerate { id: id.clone(), reason: e.to_string() })?;
        let squares: Vec<MoveSquares> = (0..3)
            .map(|j| MoveSquares {
                source: states[j].to_player_frame(pv[j].source),
                target: states[j].to_player_frame(pv[j].target),
            })
            .collect();
        let subsplit = subsplit_of(&pv);
        Ok(PuzzleRecord { id, fen: board.fen(), pv, rating, squares, subsplit, corruption: None })
    }

    pub fn board(&self) -> Result<Board> {
        Board::from_fen(&self.fen)
    }

    /// The board before PV move `j` (1-based).
    pub fn state(&self, j: usize) -> Result<Board> {
        let mut b = self.board()?;
        for mv in &self.pv[..j - 1] {
            b = b.apply_move(*mv)?;
        }
        Ok(b)
    }

    /// Target of PV move `j` (1-based) in the frame of the state it is played from.
    pub fn t(&self, j: usize) -> Square {
        self.squares[j - 1].target
    }

    pub fn s(&self, j: usize) -> Square {
        self.squares[j - 1].source
    }

    pub fn best_move(&self) -> Move {
        self.pv[0]
    }

    /// Re-derives the squares and subsplit and compares with the stored ones.
    pub fn check(&self) -> Result<()> {
        let fresh = PuzzleRecord::new(self.id.clone(), &self.fen, self.pv.clone(), self.rating)?;
        if fresh.squares != self.squares || fresh.subsplit != self.subsplit {
            return Err(Error::Dataset(format!("puzzle {}: stored squares disagree with its PV", self.id)));
        }
        Ok(())
    }
}

/// All states along `pv`: element j is the board before move j+1.
fn replay(start: &Board, pv: &[Move]) -> Result<Vec<Board>> {
    let mut states = vec![start.clone()];
    for mv in pv {
        let next = states.last().unwrap().apply_move(*mv)?;
        states.push(next);
    }
    Ok(states)
}

/// Same-target iff the first two PV moves land on one square, compared in
/// absolute coordinates.
pub fn subsplit_of(pv: &[Move]) -> Subsplit {
    if pv.len() >= 2 && pv[0].target == pv[1].target {
        Subsplit::SameTarget
    } else {
        Subsplit::DifferentTarget
    }
}

/// What to do with the first move of each CSV row. The public Lichess dump
/// stores the position before the opponent's last move and lists that move
/// first.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SetupMove {
    /// The row's FEN is already the puzzle start.
    Keep,
    /// Play the first listed move to reach the start.
    #[default]
    ApplyFirst,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub kept: usize,
    pub skipped: BTreeMap<String, usize>,
}

fn row_record(fen: &str, moves: &str, setup: SetupMove, id: &str, rating: &str) -> Result<PuzzleRecord, &'static str> {
    let mut board = Board::from_fen(fen).map_err(|_| "bad-fen")?;
    let mut ms: Vec<&str> = moves.split_whitespace().collect();
    if setup == SetupMove::ApplyFirst {
        if ms.is_empty() {
            return Err("short-pv");
        }
        let m = board.parse_uci(ms.remove(0)).map_err(|_| "illegal-setup")?;
        board = board.apply_move(m).map_err(|_| "illegal-setup")?;
    }
    if ms.len() < MIN_PV {
        return Err("short-pv");
    }
    let mut pv = Vec::new();
    let mut b = board.clone();
    for m in ms {
        let mv = b.parse_uci(m).map_err(|_| "illegal-pv")?;
        b = b.apply_move(mv).map_err(|_| "illegal-pv")?;
        pv.push(mv);
    }
    let rating = rating.trim().parse().map_err(|_| "bad-rating")?;
    PuzzleRecord::new(id, &board.fen(), pv, rating).map_err(|_| "illegal-pv")
}

/// Reads a puzzle CSV with at least `PuzzleId, FEN, Moves, Rating`.
/// Malformed rows are logged and counted under a reason.
pub fn ingest_lichess_csv(path: &Path, setup: SetupMove) -> Result<(Vec<PuzzleRecord>, IngestReport)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("header mismatch: no column {name:?} in {}", path.display())))
    };
    let (ci, cf, cm, cr) = (col("PuzzleId")?, col("FEN")?, col("Moves")?, col("Rating")?);
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        report.rows += 1;
        let parsed = match rec {
            Err(_) => Err("unreadable-row"),
            Ok(r) => match (r.get(ci), r.get(cf), r.get(cm), r.get(cr)) {
                (Some(id), Some(fen), Some(moves), Some(rating)) => row_record(fen, moves, setup, id, rating),
                _ => Err("missing-field"),
            },
        };
        match parsed {
            Ok(p) => {
                out.push(p);
                report.kept += 1;
            }
            Err(reason) => {
                log::debug!("row {}: skipped ({reason})", row + 2);
                *report.skipped.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    Ok((out, report))
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PuzzleThresholds {
    /// Weak model must give every player move at most this much.
    pub weak_max: f64,
    /// Strong model must give every player move at least this much.
    pub strong_min: f64,
    /// Weak model must give the opponent's reply at least this much.
    pub opponent_min: f64,
}

impl Default for PuzzleThresholds {
    fn default() -> Self {
        PuzzleThresholds { weak_max: 0.10, strong_min: 0.50, opponent_min: 0.50 }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FilterVerdict {
    Keep,
    /// `move_index` is 1-based.
    Discard { reason: String, move_index: usize },
}

/// Walks the PV; odd moves belong to the player, move 2 is the opponent's
/// reply. Conditions are checked in PV order.
pub fn filter_puzzle(
    strong: &dyn PolicyModel,
    weak: &dyn PolicyModel,
    rec: &PuzzleRecord,
    th: &PuzzleThresholds,
) -> Result<FilterVerdict> {
    let discard = |reason: &str, j: usize| Ok(FilterVerdict::Discard { reason: reason.into(), move_index: j });
    let mut board = rec.board()?;
    for (i, &mv) in rec.pv.iter().enumerate() {
        let j = i + 1;
        if j % 2 == 1 {
            if weak.evaluate(&board)?.dist.prob(mv) > th.weak_max {
                return discard("weak-too-strong", j);
            }
            if strong.evaluate(&board)?.dist.prob(mv) < th.strong_min {
                return discard("strong-too-weak", j);
            }
        } else if j == 2 && weak.evaluate(&board)?.dist.prob(mv) < th.opponent_min {
            return discard("opponent-not-forcing", j);
        }
        board = board.apply_move(mv)?;
    }
    Ok(FilterVerdict::Keep)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
}

/// Writes records sorted by id, one JSON object per line after a header.
pub fn save_dataset(path: &Path, records: &[PuzzleRecord]) -> Result<()> {
    let mut sorted: Vec<&PuzzleRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = Header { format: DATASET_FORMAT.into(), version: DATASET_VERSION, count: sorted.len() };
    writeln!(f, "{}", serde_json::to_string(&header)?)?;
    for r in sorted {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`], checking the header and
/// every record's PV.
pub fn load_dataset(path: &Path) -> Result<Vec<PuzzleRecord>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Dataset(format!("bad dataset header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Dataset(format!(
            "dataset is {} v{}, expected {DATASET_FORMAT} v{DATASET_VERSION}",
            header.format, header.version
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PuzzleRecord = serde_json::from_str(&line)?;
        rec.check()?;
        out.push(rec);
    }
    if out.len() != header.count {
        return Err(Error::Dataset(format!("header says {} records, found {}", header.count, out.len())));
    }
    Ok(out)
}

/// Seeded 70/30 split by shuffled id; returns (train, eval).
pub fn train_eval_split(records: &[PuzzleRecord], train_fraction: f64, seed: u64) -> (Vec<PuzzleRecord>, Vec<PuzzleRecord>) {
    let mut sorted: Vec<PuzzleRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (sorted.len() as f64 * train_fraction).round() as usize;
    let eval = sorted.split_off(n_train.min(sorted.len()));
    (sorted, eval)
}

/// The first `n` records by id.
pub fn limit_by_id(records: &[PuzzleRecord], n: Option<usize>) -> Vec<PuzzleRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(n) = n {
        v.truncate(n);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(s: &str) -> Move {
        s.parse().unwrap()
    }

    #[test]
    fn squares_use_mover_frame() {
        // Black to move: its squares are flipped vertically.
        let r = PuzzleRecord::new(
            "x",
            "4k3/8/8/8/8/8/4P3/4K3 b - - 0 1",
            vec![mv("e8d7"), mv("e2e4"), mv("d7d6")],
            1500,
        )
        .unwrap();
        assert_eq!(r.t(1), "d2".parse().unwrap());
        assert_eq!(r.t(2), "e4".parse().unwrap());
        assert_eq!(r.t(3), "d3".parse().unwrap());
        assert_eq!(r.subsplit, Subsplit::DifferentTarget);
    }

    #[test]
    fn capture_on_landing_square_is_same_target() {
        let r = PuzzleRecord::new(
            "y",
            "4k3/8/4p3/8/8/8/8/3QK3 w - - 0 1",
            vec![mv("d1d5"), mv("e6d5"), mv("e1e2")],
            1500,
        )
        .unwrap();
        assert_eq!(r.subsplit, Subsplit::SameTarget);
    }

    #[test]
    fn short_or_illegal_pv_rejected() {
        assert!(PuzzleRecord::new("z", crate::chess::START_FEN, vec![mv("e2e4"), mv("e7e5")], 0).is_err());
        assert!(PuzzleRecord::new("z", crate::chess::START_FEN, vec![mv("e2e5"), mv("e7e5"), mv("g1f3")], 0).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let recs: Vec<PuzzleRecord> = (0..20)
            .map(|i| {
                PuzzleRecord::new(format!("p{i:02}"), crate::chess::START_FEN, vec![mv("e2e4"), mv("e7e5"), mv("g1f3")], i)
                    .unwrap()
            })
            .collect();
        let (a, b) = train_eval_split(&recs, 0.7, 1);
        let (c, _) = train_eval_split(&recs, 0.7, 1);
        let (d, _) = train_eval_split(&recs, 0.7, 2);
        assert_eq!((a.len(), b.len()), (14, 6));
        assert_eq!(a, c);
        assert_ne!(a, d);
    }
}
