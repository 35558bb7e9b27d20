// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.

mod commands;
mod config;
mod metrics;
mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lookahead::interventions::EntryOrientation;
use lookahead::model::{random_init_like, Model};
use lookahead::puzzles::{limit_by_id, load_dataset, PuzzleRecord, SetupMove};
use lookahead::{Error, Result};

use config::RunConfig;
use output::{Manifest, RunDir, RUN_FORMAT, RUN_VERSION};

#[derive(Parser, Debug)]
#[command(name = "lookahead", version, about = "Look-ahead experiments on square-per-token chess transformers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use only the first N puzzles by id.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    /// Strong model archive.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Weak reference model archive.
    #[arg(long, global = true)]
    pub weak_weights: Option<PathBuf>,
    /// Puzzle dataset (JSONL from filter-puzzles or find-corruptions).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Ingest a Lichess-format CSV and keep puzzles that need look-ahead.
    FilterPuzzles {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        weak_threshold: Option<f64>,
        #[arg(long)]
        strong_threshold: Option<f64>,
        #[arg(long)]
        opponent_threshold: Option<f64>,
        #[arg(long)]
        min_pv: Option<usize>,
        #[arg(long, value_enum)]
        setup_move: Option<SetupMove>,
    },
    /// Search a minimal corrupting edit for each puzzle.
    FindCorruptions {
        #[arg(long)]
        strong_max_prob: Option<f64>,
        #[arg(long)]
        weak_max_drop: Option<f64>,
        #[arg(long)]
        value_max_gain: Option<f64>,
        #[arg(long)]
        no_strong_filter: bool,
        #[arg(long)]
        no_weak_filter: bool,
        #[arg(long)]
        no_value_filter: bool,
    },
    /// Patch every (layer, square) residual from the corrupted run.
    PatchResidual,
    /// Patch every head output from the corrupted run.
    PatchHeads,
    /// Single-entry and complement ablation of one head at (t1, t3).
    #[command(name = "ablate-l12h12")]
    AblateL12h12 {
        /// Head label, 1-based.
        #[arg(long)]
        head: Option<String>,
        #[arg(long, value_enum)]
        orientation: Option<EntryOrientation>,
    },
    /// Score every head against the knight, bishop and rook masks.
    DetectHeads {
        #[arg(long)]
        boards: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Ablate key-t3 attention of piece heads.
    AblatePieceHeads {
        /// tags.json from detect-heads.
        #[arg(long)]
        tags: PathBuf,
    },
    /// Train bilinear probes for t3 and s3.
    TrainProbes {
        /// 1-based layers, comma separated.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Train on a randomly initialised copy of the model.
        #[arg(long)]
        random_init: bool,
    },
    /// Evaluate probes from a train-probes run on its held-out split.
    EvalProbes {
        /// Output directory of train-probes.
        #[arg(long)]
        probes: PathBuf,
    },
    /// Break a run's per-puzzle metrics down by subsplit.
    SubsplitReport {
        /// Output directory of an earlier run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Invariant checks on the synthetic planted model.
    Selfcheck,
    /// Write a planted model, a weak model and a small puzzle set.
    MakeFixture {
        #[arg(long, default_value_t = 4)]
        puzzles: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FilterPuzzles { .. } => "filter-puzzles",
            Command::FindCorruptions { .. } => "find-corruptions",
            Command::PatchResidual => "patch-residual",
            Command::PatchHeads => "patch-heads",
            Command::AblateL12h12 { .. } => "ablate-l12h12",
            Command::DetectHeads { .. } => "detect-heads",
            Command::AblatePieceHeads { .. } => "ablate-piece-heads",
            Command::TrainProbes { .. } => "train-probes",
            Command::EvalProbes { .. } => "eval-probes",
            Command::SubsplitReport { .. } => "subsplit-report",
            Command::Selfcheck => "selfcheck",
            Command::MakeFixture { .. } => "make-fixture",
        }
    }
}

/// Shared state of one invocation.
pub struct Ctx {
    pub common: Common,
    pub cfg: RunConfig,
    pub command: &'static str,
}

impl Ctx {
    fn need<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        let p = value.as_deref().ok_or_else(|| Error::Config(format!("{} needs {flag}", self.command)))?;
        if !p.exists() {
            return Err(Error::MissingInput(p.to_path_buf()));
        }
        Ok(p)
    }

    pub fn model(&self) -> Result<Model> {
        Model::load(self.need(&self.common.weights, "--weights")?)
    }

    pub fn weak_model(&self) -> Result<Model> {
        Model::load(self.need(&self.common.weak_weights, "--weak-weights")?)
    }

    /// The dataset, cut to `--limit` by id.
    pub fn dataset(&self) -> Result<Vec<PuzzleRecord>> {
        let all = load_dataset(self.need(&self.common.dataset, "--dataset")?)?;
        let ds = limit_by_id(&all, self.cfg.limit);
        log::info!("{} of {} puzzles", ds.len(), all.len());
        Ok(ds)
    }

    /// Model for probe runs, optionally re-initialised.
    pub fn probe_model(&self, random_init: bool) -> Result<Model> {
        let m = self.model()?;
        if random_init {
            random_init_like(&m, self.cfg.seed)
        } else {
            Ok(m)
        }
    }

    pub fn run_dir(&self) -> Result<RunDir> {
        let out = self.common.out.as_deref().ok_or_else(|| Error::Config(format!("{} needs --out", self.command)))?;
        let mut inputs = std::collections::BTreeMap::new();
        for (k, v) in [("weights", &self.common.weights), ("weak_weights", &self.common.weak_weights), ("dataset", &self.common.dataset)] {
            if let Some(p) = v {
                inputs.insert(k.to_string(), p.display().to_string());
            }
        }
        let manifest = Manifest {
            format: RUN_FORMAT.into(),
            version: RUN_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config: serde_json::to_value(&self.cfg)?,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs,
            ..Manifest::default()
        };
        RunDir::create(out, manifest)
    }
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common, cmd: &Command) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if common.limit.is_some() {
        cfg.limit = common.limit;
    }
    fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *dst = v.clone();
        }
    }
    match cmd {
        Command::FilterPuzzles { weak_threshold, strong_threshold, opponent_threshold, min_pv, setup_move, .. } => {
            set(&mut cfg.puzzles.weak_threshold, weak_threshold);
            set(&mut cfg.puzzles.strong_threshold, strong_threshold);
            set(&mut cfg.puzzles.opponent_threshold, opponent_threshold);
            set(&mut cfg.puzzles.min_pv, min_pv);
            set(&mut cfg.puzzles.setup_move, setup_move);
        }
        Command::FindCorruptions { strong_max_prob, weak_max_drop, value_max_gain, no_strong_filter, no_weak_filter, no_value_filter } => {
            set(&mut cfg.corruption.strong_max_prob, strong_max_prob);
            set(&mut cfg.corruption.weak_max_drop, weak_max_drop);
            set(&mut cfg.corruption.value_max_gain, value_max_gain);
            cfg.corruption.use_strong &= !no_strong_filter;
            cfg.corruption.use_weak &= !no_weak_filter;
            cfg.corruption.use_value &= !no_value_filter;
        }
        Command::AblateL12h12 { head, orientation } => {
            set(&mut cfg.heads.entry_head, head);
            set(&mut cfg.heads.orientation, orientation);
        }
        Command::DetectHeads { boards, threshold } => {
            set(&mut cfg.heads.boards, boards);
            set(&mut cfg.heads.threshold, threshold);
        }
        Command::TrainProbes { layers, seeds, rank, lr, epochs, batch, train_fraction, .. } => {
            set(&mut cfg.probes.layers, layers);
            set(&mut cfg.probes.seeds, seeds);
            set(&mut cfg.probes.rank, rank);
            set(&mut cfg.probes.lr, lr);
            set(&mut cfg.probes.epochs, epochs);
            set(&mut cfg.probes.batch, batch);
            set(&mut cfg.probes.train_fraction, train_fraction);
        }
        _ => {}
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    apply_overrides(&mut cfg, &cli.common, &cli.command);
    cfg.validate()?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx { common: cli.common, cfg, command: cli.command.name() };
    commands::dispatch(&ctx, &cli.command)
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
