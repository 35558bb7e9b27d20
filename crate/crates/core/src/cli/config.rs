// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: TOML file, then command-line overrides.

use std::path::Path;

use lookahead::corruption::FilterConfig;
use lookahead::interventions::EntryOrientation;
use lookahead::probes::Hyper;
use lookahead::puzzles::{PuzzleThresholds, SetupMove, MIN_PV};
use lookahead::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub limit: Option<usize>,
    pub puzzles: PuzzleSection,
    pub corruption: FilterConfig,
    pub heads: HeadSection,
    pub probes: ProbeSection,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuzzleSection {
    pub weak_threshold: f64,
    pub strong_threshold: f64,
    pub opponent_threshold: f64,
    pub min_pv: usize,
    pub setup_move: SetupMove,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    /// Mass-on-mask threshold for tagging piece heads. Not calibrated
    /// against real weights yet.
    pub threshold: f64,
    /// Random positions used for detection.
    pub boards: usize,
    /// Head for the single-entry experiment, 1-based label.
    pub entry_head: String,
    pub orientation: EntryOrientation,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub rank: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Independent training seeds per layer.
    pub seeds: usize,
    /// 1-based layers; empty means all.
    pub layers: Vec<usize>,
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 0,
            limit: None,
            puzzles: PuzzleSection::default(),
            corruption: FilterConfig::default(),
            heads: HeadSection::default(),
            probes: ProbeSection::default(),
        }
    }
}

impl Default for PuzzleSection {
    fn default() -> Self {
        let t = PuzzleThresholds::default();
        PuzzleSection {
            weak_threshold: t.weak_max,
            strong_threshold: t.strong_min,
            opponent_threshold: t.opponent_min,
            min_pv: MIN_PV,
            setup_move: SetupMove::default(),
        }
    }
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection {
            threshold: lookahead::heads::DEFAULT_THRESHOLD,
            boards: 1000,
            entry_head: "L12H12".into(),
            orientation: EntryOrientation::default(),
        }
    }
}

impl Default for ProbeSection {
    fn default() -> Self {
        let h = Hyper::default();
        ProbeSection { rank: h.rank, lr: h.lr, batch: h.batch, epochs: h.epochs, seeds: 3, layers: vec![], train_fraction: 0.7 }
    }
}

impl PuzzleSection {
    pub fn thresholds(&self) -> PuzzleThresholds {
        PuzzleThresholds { weak_max: self.weak_threshold, strong_min: self.strong_threshold, opponent_min: self.opponent_threshold }
    }
}

impl ProbeSection {
    pub fn hyper(&self, seed: u64) -> Hyper {
        Hyper { rank: self.rank, lr: self.lr, batch: self.batch, epochs: self.epochs, seed, ..Hyper::default() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("puzzles.weak_threshold", self.puzzles.weak_threshold)?;
        unit("puzzles.strong_threshold", self.puzzles.strong_threshold)?;
        unit("puzzles.opponent_threshold", self.puzzles.opponent_threshold)?;
        unit("corruption.strong_max_prob", self.corruption.strong_max_prob)?;
        unit("probes.train_fraction", self.probes.train_fraction)?;
        if self.puzzles.min_pv < MIN_PV {
            return Err(Error::Config(format!("puzzles.min_pv must be at least {MIN_PV}")));
        }
        if self.probes.seeds == 0 || self.probes.rank == 0 || self.probes.batch == 0 {
            return Err(Error::Config("probes.seeds, rank and batch must be positive".into()));
        }
        if self.probes.layers.contains(&0) {
            return Err(Error::Config("probe layers are 1-based".into()));
        }
        self.heads.entry_head.parse::<lookahead::interventions::HeadRef>()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[puzzles]\nweak_threshold = 0.2\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.puzzles.weak_threshold, 0.2);
        assert_eq!(c.puzzles.strong_threshold, 0.5);
        assert_eq!(c.corruption, FilterConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 4").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.probes.seeds = 5;
        assert_ne!(a.hash(), b.hash());
    }
}
