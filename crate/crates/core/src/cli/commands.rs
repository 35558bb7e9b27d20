// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use lookahead::corruption::{find_corruption, CorruptionCandidate, Mutation};
use lookahead::heads::{all_head_scores, sample_boards, tags_from_scores, HeadTag};
use lookahead::interventions::{
    classify_squares, corrupted_squares, entry_experiment, head_sweep, piece_head_ablation, puzzle_context,
    residual_sweep, EffectRecord, HeadRef, SquareClass,
};
use lookahead::model::synthetic::default_planted_model;
use lookahead::model::{random_init_like, Model};
use lookahead::probes::{
    argmax, cache_activations, dataset_hash, evaluate, predict_third_move, probe_logits, train_probe, ProbeParams,
    SeededAccuracy, Stage,
};
use lookahead::puzzles::{
    filter_puzzle, ingest_lichess_csv, limit_by_id, load_dataset, save_dataset, train_eval_split, FilterVerdict,
    PuzzleRecord, Subsplit,
};
use lookahead::selfcheck;
use lookahead::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{curves, summarize, summarize_by_subsplit, Metric, Skipped};
use super::output::{file_hash, Manifest, RunDir};
use super::{Command, Ctx};

pub fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<i32> {
    match cmd {
        Command::FilterPuzzles { csv, .. } => filter_puzzles(ctx, csv),
        Command::FindCorruptions { .. } => find_corruptions(ctx),
        Command::PatchResidual => patch_residual(ctx),
        Command::PatchHeads => patch_heads(ctx),
        Command::AblateL12h12 { .. } => ablate_entry(ctx),
        Command::DetectHeads { .. } => detect_heads(ctx),
        Command::AblatePieceHeads { tags } => ablate_piece_heads(ctx, tags),
        Command::TrainProbes { random_init, .. } => train_probes(ctx, *random_init),
        Command::EvalProbes { probes } => eval_probes(ctx, probes),
        Command::SubsplitReport { run } => subsplit_report(ctx, run),
        Command::Selfcheck => run_selfcheck(ctx),
        Command::MakeFixture { puzzles } => make_fixture(ctx, *puzzles),
    }?;
    Ok(0)
}

/// Errors that mean "this puzzle does not apply" rather than a broken run.
fn skippable(e: &Error) -> bool {
    matches!(e, Error::Degenerate { .. } | Error::NoCorruption | Error::NoTaggedHeads(_) | Error::Terminal)
}

/// Runs `f` on every puzzle in parallel, keeping dataset order.
fn per_puzzle<'a, T: Send>(
    ds: &'a [PuzzleRecord],
    f: impl Fn(&PuzzleRecord) -> Result<T> + Sync,
) -> Result<(Vec<(&'a PuzzleRecord, T)>, Vec<Skipped>)> {
    let results: Vec<Result<T>> = ds.par_iter().map(|p| f(p)).collect();
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in ds.iter().zip(results) {
        match r {
            Ok(v) => done.push((p, v)),
            Err(e) if skippable(&e) => {
                log::debug!("{}: skipped ({e})", p.id);
                skipped.push(Skipped { puzzle_id: p.id.clone(), reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if !skipped.is_empty() {
        log::info!("{} of {} puzzles skipped", skipped.len(), ds.len());
    }
    Ok((done, skipped))
}

fn write_metrics(rd: &mut RunDir, metrics: &[Metric], skipped: &[Skipped]) -> Result<()> {
    rd.write_jsonl("metrics.jsonl", metrics)?;
    rd.write_csv("summary.csv", &summarize(metrics))?;
    rd.write_csv("skipped.csv", skipped)
}

fn stamp_model(rd: &mut RunDir, model: &Model) {
    rd.manifest.model_hash = Some(model.fingerprint().to_string());
}

fn stamp_dataset(rd: &mut RunDir, ds: &[PuzzleRecord]) {
    rd.manifest.dataset_hash = Some(dataset_hash(ds));
    rd.manifest.extra.insert("puzzles".into(), json!(ds.len()));
}

fn save_puzzles(rd: &mut RunDir, name: &str, recs: &[PuzzleRecord]) -> Result<()> {
    save_dataset(&rd.path(name), recs)?;
    rd.register(name);
    Ok(())
}

#[derive(Serialize)]
struct CountRow {
    item: String,
    count: usize,
}

#[derive(Serialize)]
struct SubsplitShare {
    stage: &'static str,
    subsplit: &'static str,
    n: usize,
    fraction: f64,
}

fn shares(stage: &'static str, recs: &[PuzzleRecord]) -> Vec<SubsplitShare> {
    [Subsplit::SameTarget, Subsplit::DifferentTarget]
        .into_iter()
        .map(|s| {
            let n = recs.iter().filter(|r| r.subsplit == s).count();
            SubsplitShare { stage, subsplit: s.name(), n, fraction: n as f64 / recs.len().max(1) as f64 }
        })
        .collect()
}

#[derive(Serialize)]
struct VerdictRow<'a> {
    puzzle_id: &'a str,
    subsplit: Subsplit,
    #[serde(flatten)]
    verdict: &'a FilterVerdict,
}

fn filter_puzzles(ctx: &Ctx, csv: &Path) -> Result<()> {
    if !csv.exists() {
        return Err(Error::MissingInput(csv.to_path_buf()));
    }
    let strong = ctx.model()?;
    let weak = ctx.weak_model()?;
    let mut rd = ctx.run_dir()?;
    rd.manifest.inputs.insert("csv".into(), csv.display().to_string());
    rd.manifest.extra.insert("csv_sha256".into(), json!(file_hash(csv)?));
    let (all, report) = ingest_lichess_csv(csv, ctx.cfg.puzzles.setup_move)?;
    let recs = limit_by_id(&all, ctx.cfg.limit);
    let th = ctx.cfg.puzzles.thresholds();
    let min_pv = ctx.cfg.puzzles.min_pv;
    let (verdicts, _) = per_puzzle(&recs, |p| {
        if p.pv.len() < min_pv {
            return Ok(FilterVerdict::Discard { reason: "short-pv".into(), move_index: 0 });
        }
        filter_puzzle(&strong, &weak, p, &th)
    })?;
    let kept: Vec<PuzzleRecord> =
        verdicts.iter().filter(|(_, v)| *v == FilterVerdict::Keep).map(|(p, _)| (*p).clone()).collect();
    let rows: Vec<VerdictRow> =
        verdicts.iter().map(|(p, v)| VerdictRow { puzzle_id: &p.id, subsplit: p.subsplit, verdict: v }).collect();
    let metrics: Vec<Metric> =
        verdicts.iter().map(|(p, v)| Metric::new(p, "kept", (*v == FilterVerdict::Keep) as u8 as f64)).collect();

    let mut counts = vec![
        CountRow { item: "rows".into(), count: report.rows },
        CountRow { item: "ingested".into(), count: report.kept },
        CountRow { item: "considered".into(), count: recs.len() },
        CountRow { item: "kept".into(), count: kept.len() },
    ];
    for (reason, n) in &report.skipped {
        counts.push(CountRow { item: format!("ingest:{reason}"), count: *n });
    }
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, v) in &verdicts {
        if let FilterVerdict::Discard { reason, .. } = v {
            *reasons.entry(reason).or_default() += 1;
        }
    }
    counts.extend(reasons.into_iter().map(|(r, n)| CountRow { item: format!("discard:{r}"), count: n }));
    let mut split = shares("considered", &recs);
    split.extend(shares("kept", &kept));

    stamp_model(&mut rd, &strong);
    rd.manifest.weak_model_hash = Some(weak.fingerprint().to_string());
    stamp_dataset(&mut rd, &kept);
    save_puzzles(&mut rd, "puzzles.jsonl", &kept)?;
    rd.write_jsonl("verdicts.jsonl", &rows)?;
    rd.write_jsonl("metrics.jsonl", &metrics)?;
    rd.write_csv("summary.csv", &counts)?;
    rd.write_csv("subsplit.csv", &split)?;
    let out = rd.finish()?;
    println!("kept {} of {} puzzles -> {}", kept.len(), recs.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SearchRow<'a> {
    puzzle_id: &'a str,
    candidates: usize,
    survivors: usize,
    selected: &'a Option<CorruptionCandidate>,
}

fn find_corruptions(ctx: &Ctx) -> Result<()> {
    let strong = ctx.model()?;
    let weak = ctx.weak_model()?;
    let ds = ctx.dataset()?;
    let mut rd = ctx.run_dir()?;
    let fc = &ctx.cfg.corruption;
    let (outcomes, skipped) = per_puzzle(&ds, |p| find_corruption(&strong, &weak, &p.board()?, p.best_move(), fc))?;
    let mut with = Vec::new();
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (p, o) in &outcomes {
        rows.push(SearchRow { puzzle_id: &p.id, candidates: o.candidates, survivors: o.survivors, selected: &o.selected });
        metrics.push(Metric::new(p, "candidates", o.candidates as f64));
        metrics.push(Metric::new(p, "survivors", o.survivors as f64));
        metrics.push(Metric::new(p, "has_corruption", o.selected.is_some() as u8 as f64));
        if let Some(c) = &o.selected {
            let mut r = (*p).clone();
            r.corruption = Some(c.clone());
            with.push(r);
        }
    }
    stamp_model(&mut rd, &strong);
    rd.manifest.weak_model_hash = Some(weak.fingerprint().to_string());
    stamp_dataset(&mut rd, &ds);
    save_puzzles(&mut rd, "puzzles.jsonl", &with)?;
    rd.write_jsonl("corruptions.jsonl", &rows)?;
    write_metrics(&mut rd, &metrics, &skipped)?;
    let out = rd.finish()?;
    println!("{} of {} puzzles have a corruption -> {}", with.len(), ds.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ResidualRow<'a> {
    #[serde(flatten)]
    record: &'a EffectRecord,
    class: SquareClass,
}

fn patch_residual(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let ds = ctx.dataset()?;
    let mut rd = ctx.run_dir()?;
    let (sweeps, skipped) = per_puzzle(&ds, |p| {
        let pc = puzzle_context(&model, p)?;
        let classes = classify_squares(&corrupted_squares(p)?, Some(p.t(1)), Some(p.t(3)));
        residual_sweep(&pc, classes)
    })?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (p, s) in &sweeps {
        rows.extend(s.records.iter().zip(s.classes.iter().cycle()).map(|(record, &class)| ResidualRow { record, class }));
        for l in 0..s.n_layers {
            for class in [SquareClass::Corrupted, SquareClass::T1, SquareClass::T3] {
                if let Some(v) = s.class_mean(l, class) {
                    metrics.push(Metric::new(p, format!("L{}:{}", l + 1, class.name()), v));
                }
            }
            if let Some(v) = s.max_other(l) {
                metrics.push(Metric::new(p, format!("L{}:other_max", l + 1), v));
            }
        }
    }
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &ds);
    rd.write_jsonl("effects.jsonl", &rows)?;
    write_metrics(&mut rd, &metrics, &skipped)?;
    let out = rd.finish()?;
    println!("{} residual patches over {} puzzles -> {}", rows.len(), sweeps.len(), out.display());
    Ok(())
}

fn patch_heads(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let ds = ctx.dataset()?;
    let mut rd = ctx.run_dir()?;
    let (sweeps, skipped) = per_puzzle(&ds, |p| head_sweep(&puzzle_context(&model, p)?))?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (p, recs) in &sweeps {
        for r in recs {
            let head = HeadRef { layer: r.site.layer(), head: r.site.head().expect("head site") };
            metrics.push(Metric::new(p, head.to_string(), r.effect.delta));
            rows.push(r);
        }
    }
    let summary = summarize(&metrics);
    if let Some(top) = summary.iter().filter(|r| r.mean.is_some()).max_by(|a, b| a.mean.unwrap_or(0.0).total_cmp(&b.mean.unwrap_or(0.0))) {
        rd.manifest.extra.insert("top_head".into(), json!(top.metric));
        println!("largest mean effect: {} ({:.4})", top.metric, top.mean.unwrap_or(0.0));
    }
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &ds);
    rd.write_jsonl("effects.jsonl", &rows)?;
    write_metrics(&mut rd, &metrics, &skipped)?;
    let out = rd.finish()?;
    println!("{} head patches over {} puzzles -> {}", rows.len(), sweeps.len(), out.display());
    Ok(())
}

fn check_head(model: &Model, h: HeadRef) -> Result<()> {
    let s = model.spec();
    if h.layer >= s.n_layers || h.head >= s.n_heads {
        return Err(Error::Config(format!("head {h} outside a {}-layer, {}-head model", s.n_layers, s.n_heads)));
    }
    Ok(())
}

/// Per-puzzle single-entry effect above this counts as large.
const LARGE_SINGLE: f64 = 1.5;

fn ablate_entry(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let head: HeadRef = ctx.cfg.heads.entry_head.parse()?;
    check_head(&model, head)?;
    let ds = ctx.dataset()?;
    let mut rd = ctx.run_dir()?;
    let orient = ctx.cfg.heads.orientation;
    let (exps, skipped) = per_puzzle(&ds, |p| entry_experiment(&model, p, head, orient))?;
    let mut metrics = Vec::new();
    for (p, e) in &exps {
        metrics.push(Metric::new(p, "single", e.single.delta));
        metrics.push(Metric::new(p, "complement", e.complement.delta));
        metrics.push(Metric::new(p, "entry_is_max", e.entry_is_global_max as u8 as f64));
        metrics.push(Metric::new(p, "single_gt_1.5", (e.single.delta > LARGE_SINGLE) as u8 as f64));
    }
    let entries: Vec<_> = exps.iter().map(|(_, e)| e).collect();
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &ds);
    rd.manifest.extra.insert("head".into(), json!(head));
    rd.write_jsonl("entries.jsonl", &entries)?;
    write_metrics(&mut rd, &metrics, &skipped)?;
    rd.write_csv("curves.csv", &curves(&metrics, &["single", "complement"])?)?;
    let out = rd.finish()?;
    println!("{head}: {} puzzles ablated, {} skipped -> {}", entries.len(), skipped.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow {
    layer: usize,
    head: usize,
    label: String,
    knight: f64,
    bishop: f64,
    rook: f64,
}

fn detect_heads(ctx: &Ctx) -> Result<()> {
    let model = ctx.model()?;
    let mut rd = ctx.run_dir()?;
    let hc = &ctx.cfg.heads;
    let boards = sample_boards(hc.boards, ctx.cfg.seed);
    let scores = all_head_scores(&model, &boards, ctx.cfg.seed)?;
    let n_heads = model.spec().n_heads;
    let tags = tags_from_scores(&scores, n_heads, hc.threshold);
    let rows: Vec<ScoreRow> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let h = HeadRef { layer: i / n_heads, head: i % n_heads };
            ScoreRow { layer: h.layer + 1, head: h.head + 1, label: h.to_string(), knight: s[0], bishop: s[1], rook: s[2] }
        })
        .collect();
    let counts: Vec<CountRow> = lookahead::interventions::HEAD_KINDS
        .iter()
        .map(|k| CountRow { item: k.name().to_string(), count: tags.iter().filter(|t| t.kind == *k).count() })
        .collect();
    stamp_model(&mut rd, &model);
    rd.manifest.extra.insert("boards".into(), json!(boards.len()));
    rd.write_csv("scores.csv", &rows)?;
    rd.write_json("tags.json", &tags)?;
    rd.write_csv("summary.csv", &counts)?;
    let out = rd.finish()?;
    println!("{} heads tagged -> {}", tags.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PieceMetricCounts {
    kind: String,
    puzzles: usize,
}

fn ablate_piece_heads(ctx: &Ctx, tags_path: &Path) -> Result<()> {
    if !tags_path.exists() {
        return Err(Error::MissingInput(tags_path.to_path_buf()));
    }
    let tags: Vec<HeadTag> = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(tags_path)?))?;
    let model = ctx.model()?;
    for t in &tags {
        check_head(&model, t.head)?;
    }
    let ds = ctx.dataset()?;
    let mut rd = ctx.run_dir()?;
    rd.manifest.inputs.insert("tags".into(), tags_path.display().to_string());
    let seed = ctx.cfg.seed;
    let (recs, skipped) = per_puzzle(&ds, |p| piece_head_ablation(&model, p, &tags, seed))?;
    let mut metrics = Vec::new();
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for (p, r) in &recs {
        metrics.push(Metric::new(p, "matched", r.matched.delta));
        metrics.push(Metric::new(p, "other_type", r.other_type.delta));
        metrics.push(Metric::new(p, "random", r.random.delta));
        metrics.push(Metric::new(p, "matched_ge_1.5", (r.matched.delta >= LARGE_SINGLE) as u8 as f64));
        *by_kind.entry(r.kind.name().to_string()).or_default() += 1;
    }
    let kinds: Vec<PieceMetricCounts> = by_kind.into_iter().map(|(kind, puzzles)| PieceMetricCounts { kind, puzzles }).collect();
    let rows: Vec<_> = recs.iter().map(|(_, r)| r).collect();
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &ds);
    rd.write_jsonl("records.jsonl", &rows)?;
    write_metrics(&mut rd, &metrics, &skipped)?;
    rd.write_csv("kinds.csv", &kinds)?;
    rd.write_csv("curves.csv", &curves(&metrics, &["matched", "other_type", "random"])?)?;
    let out = rd.finish()?;
    println!("{} puzzles ablated, {} skipped -> {}", rows.len(), skipped.len(), out.display());
    Ok(())
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Target => "target",
        Stage::Source => "source",
    }
}

fn probe_dir(layer: usize, stage: Stage, k: usize) -> String {
    format!("probes/L{}/{}-s{k}", layer + 1, stage_name(stage))
}

#[derive(Serialize, Deserialize)]
struct Split {
    train: BTreeSet<String>,
    eval: BTreeSet<String>,
}

#[derive(Serialize)]
struct LossRow {
    layer: usize,
    stage: &'static str,
    seed: usize,
    epoch: usize,
    loss: f64,
}

/// 0-based layers from the 1-based config list; empty means all.
fn probe_layers(ctx: &Ctx, model: &Model) -> Result<Vec<usize>> {
    let n = model.spec().n_layers;
    if ctx.cfg.probes.layers.is_empty() {
        return Ok((0..n).collect());
    }
    ctx.cfg
        .probes
        .layers
        .iter()
        .map(|&l| if l <= n { Ok(l - 1) } else { Err(Error::Config(format!("layer {l} outside a {n}-layer model"))) })
        .collect()
}

fn train_probes(ctx: &Ctx, random_init: bool) -> Result<()> {
    let model = ctx.probe_model(random_init)?;
    let layers = probe_layers(ctx, &model)?;
    let ds = ctx.dataset()?;
    let pc = &ctx.cfg.probes;
    let mut rd = ctx.run_dir()?;
    let (train, eval) = train_eval_split(&ds, pc.train_fraction, ctx.cfg.seed);
    let split = Split { train: train.iter().map(|p| p.id.clone()).collect(), eval: eval.iter().map(|p| p.id.clone()).collect() };
    let mut log_rows = Vec::new();
    for &l in &layers {
        log::info!("layer {}: caching {} training puzzles", l + 1, train.len());
        // One layer at a time keeps memory flat on the full-size model.
        let store = cache_activations(&model, &train, &[l])?;
        for k in 0..pc.seeds {
            for stage in [Stage::Target, Stage::Source] {
                let hyper = pc.hyper(ctx.cfg.seed.wrapping_add(k as u64));
                let tp = train_probe(&store, l, stage, &split.train, &hyper)?;
                tp.params.save(&rd.path(&probe_dir(l, stage, k)))?;
                for (epoch, &loss) in tp.epoch_loss.iter().enumerate() {
                    log_rows.push(LossRow { layer: l + 1, stage: stage_name(stage), seed: k, epoch: epoch + 1, loss });
                }
            }
        }
    }
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &ds);
    rd.manifest.extra.insert("random_init".into(), json!(random_init));
    rd.manifest.extra.insert("layers".into(), json!(layers.iter().map(|l| l + 1).collect::<Vec<_>>()));
    rd.manifest.extra.insert("seeds".into(), json!(pc.seeds));
    rd.register("probes");
    rd.write_json("split.json", &split)?;
    rd.write_csv("train_log.csv", &log_rows)?;
    let out = rd.finish()?;
    println!("{} probes on {} layers -> {}", 2 * pc.seeds * layers.len(), layers.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AccuracyRow {
    layer: usize,
    stage: &'static str,
    n: usize,
    seeds: usize,
    mean: f64,
    sigma_train: f64,
    sigma_acc: f64,
    sigma_total: f64,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    puzzle_id: &'a str,
    layer: usize,
    seed: usize,
    t3_pred: lookahead::chess::Square,
    s3_pred: lookahead::chess::Square,
    target_ok: bool,
    source_ok: bool,
    pipeline_ok: bool,
}

fn eval_probes(ctx: &Ctx, probes: &Path) -> Result<()> {
    let tm = Manifest::load(probes)?;
    if tm.command != "train-probes" {
        return Err(Error::Probe(format!("{} is a {} run, not train-probes", probes.display(), tm.command)));
    }
    let random_init = tm.extra.get("random_init").and_then(|v| v.as_bool()).unwrap_or(false);
    let seeds = tm.extra.get("seeds").and_then(|v| v.as_u64()).ok_or_else(|| Error::Probe("manifest lacks seeds".into()))? as usize;
    let layers: Vec<usize> = serde_json::from_value(tm.extra.get("layers").cloned().unwrap_or_default())?;
    let base = ctx.model()?;
    let model = if random_init { random_init_like(&base, tm.seed)? } else { base };
    if tm.model_hash.as_deref() != Some(model.fingerprint()) {
        return Err(Error::Probe("probes were trained on a different model".into()));
    }
    let split_path = probes.join("split.json");
    if !split_path.exists() {
        return Err(Error::MissingInput(split_path));
    }
    let split: Split = serde_json::from_str(&std::fs::read_to_string(&split_path)?)?;
    let all = load_dataset(ctx.common.dataset.as_deref().ok_or_else(|| Error::Config("eval-probes needs --dataset".into()))?)?;
    let used: Vec<PuzzleRecord> = all.iter().filter(|p| split.train.contains(&p.id) || split.eval.contains(&p.id)).cloned().collect();
    if used.len() != split.train.len() + split.eval.len() || tm.dataset_hash.as_deref() != Some(dataset_hash(&used).as_str()) {
        return Err(Error::Probe("dataset does not match the one the probes were trained on".into()));
    }
    let eval: Vec<PuzzleRecord> = used.iter().filter(|p| split.eval.contains(&p.id)).cloned().collect();
    let by_id: BTreeMap<&str, &PuzzleRecord> = eval.iter().map(|p| (p.id.as_str(), p)).collect();

    let mut rd = ctx.run_dir()?;
    rd.manifest.inputs.insert("probes".into(), probes.display().to_string());
    let mut acc_rows = Vec::new();
    let mut preds = Vec::new();
    let mut metrics = Vec::new();
    for &l1 in &layers {
        let l = l1 - 1;
        let store = cache_activations(&model, &eval, &[l])?;
        let mut runs: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        // per puzzle: (target, source, pipeline) hits over seeds
        let mut hits: BTreeMap<String, [usize; 3]> = BTreeMap::new();
        for k in 0..seeds {
            let t = ProbeParams::load(&probes.join(probe_dir(l, Stage::Target, k)))?;
            let s = ProbeParams::load(&probes.join(probe_dir(l, Stage::Source, k)))?;
            let acc = evaluate(&t, &s, &store, &split.train, &split.eval)?;
            runs.entry("target").or_default().push(acc.target_acc);
            runs.entry("source").or_default().push(acc.source_acc);
            runs.entry("pipeline").or_default().push(acc.pipeline_acc);
            for e in &store.entries {
                let res = &e.residuals[0];
                let (t3, s3) = predict_third_move(&t, &s, res, e.t1);
                let target_ok = t3 == e.t3;
                let source_ok = argmax(&probe_logits(&s, res, e.t3)) == e.s3;
                let pipeline_ok = target_ok && s3 == e.s3;
                let h = hits.entry(e.puzzle_id.clone()).or_default();
                h[0] += target_ok as usize;
                h[1] += source_ok as usize;
                h[2] += pipeline_ok as usize;
                preds.push(PredictionRow { puzzle_id: by_id[e.puzzle_id.as_str()].id.as_str(), layer: l1, seed: k, t3_pred: t3, s3_pred: s3, target_ok, source_ok, pipeline_ok });
            }
        }
        for stage in ["target", "source", "pipeline"] {
            let sa = SeededAccuracy::from_runs(runs.remove(stage).unwrap_or_default(), eval.len())?;
            acc_rows.push(AccuracyRow {
                layer: l1,
                stage,
                n: eval.len(),
                seeds,
                mean: sa.mean,
                sigma_train: sa.sigma_train,
                sigma_acc: sa.sigma_acc,
                sigma_total: sa.sigma_total,
            });
        }
        for (id, h) in &hits {
            let p = by_id[id.as_str()];
            for (i, stage) in ["target", "source", "pipeline"].iter().enumerate() {
                metrics.push(Metric::new(p, format!("L{l1}:{stage}"), h[i] as f64 / seeds as f64));
            }
        }
    }
    stamp_model(&mut rd, &model);
    stamp_dataset(&mut rd, &used);
    rd.manifest.extra.insert("random_init".into(), json!(random_init));
    rd.write_csv("accuracy.csv", &acc_rows)?;
    rd.write_jsonl("predictions.jsonl", &preds)?;
    write_metrics(&mut rd, &metrics, &[])?;
    let out = rd.finish()?;
    for r in acc_rows.iter().filter(|r| r.stage == "target") {
        println!("L{} target accuracy {:.4} ± {:.4}", r.layer, r.mean, r.sigma_total);
    }
    println!("-> {}", out.display());
    Ok(())
}

fn subsplit_report(ctx: &Ctx, run: &Path) -> Result<()> {
    let src = Manifest::load(run)?;
    let path = run.join("metrics.jsonl");
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let mut metrics = Vec::new();
    for (i, line) in std::fs::read_to_string(&path)?.lines().enumerate() {
        let m: Metric = serde_json::from_str(line).map_err(|e| Error::Dataset(format!("{} line {}: {e}", path.display(), i + 1)))?;
        metrics.push(m);
    }
    let rows = summarize_by_subsplit(&metrics);
    for c in rows.chunks(3) {
        if c[0].n != c[1].n + c[2].n {
            return Err(Error::Stats(format!("{}: subsplit counts {} + {} != {}", c[0].metric, c[1].n, c[2].n, c[0].n)));
        }
    }
    let mut ids: BTreeMap<&str, Subsplit> = BTreeMap::new();
    for m in &metrics {
        if let Some(prev) = ids.insert(&m.puzzle_id, m.subsplit) {
            if prev != m.subsplit {
                return Err(Error::Dataset(format!("puzzle {} has two subsplits", m.puzzle_id)));
            }
        }
    }
    let count = |s: Option<Subsplit>| ids.values().filter(|&&v| s.is_none_or(|s| s == v)).count();
    let counts = vec![
        CountRow { item: "all".into(), count: count(None) },
        CountRow { item: Subsplit::SameTarget.name().into(), count: count(Some(Subsplit::SameTarget)) },
        CountRow { item: Subsplit::DifferentTarget.name().into(), count: count(Some(Subsplit::DifferentTarget)) },
    ];
    let mut rd = ctx.run_dir()?;
    rd.manifest.inputs.insert("run".into(), run.display().to_string());
    rd.manifest.model_hash = src.model_hash.clone();
    rd.manifest.weak_model_hash = src.weak_model_hash.clone();
    rd.manifest.dataset_hash = src.dataset_hash.clone();
    rd.manifest.extra.insert("source_command".into(), json!(src.command));
    rd.write_csv("subsplit.csv", &rows)?;
    rd.write_csv("counts.csv", &counts)?;
    let out = rd.finish()?;
    println!("{} puzzles ({} same-target, {} different-target) -> {}", counts[0].count, counts[1].count, counts[2].count, out.display());
    Ok(())
}

#[derive(Serialize)]
struct CheckRow<'a> {
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

fn run_selfcheck(ctx: &Ctx) -> Result<()> {
    let mut rd = ctx.run_dir()?;
    let checks = selfcheck::run_all();
    for c in &checks {
        println!("{} {} ({:.2}s): {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    rd.manifest.extra.insert("failed".into(), json!(failed));
    // timings vary between runs, keep them out of the hashed csv
    let rows: Vec<CheckRow> = checks.iter().map(|c| CheckRow { name: &c.name, passed: c.passed, detail: &c.detail }).collect();
    rd.write_csv("selfcheck.csv", &rows)?;
    rd.finish()?;
    if failed > 0 {
        return Err(Error::Config(format!("{failed} selfcheck(s) failed")));
    }
    Ok(())
}

/// Lichess-style rows for the planted fixture: the stored position is one
/// ply before the puzzle and the first move leads into it.
const FIXTURE_PRE_FEN: &str = "6k1/8/2p5/8/1N6/8/8/R5K1 b - - 0 1";
const FIXTURE_MOVES: &str = "g8h8 a1a4 h8g8 b4c6 g8f7";

fn make_fixture(ctx: &Ctx, n: usize) -> Result<()> {
    let (model, plant) = default_planted_model(ctx.cfg.seed)?;
    let weak = random_init_like(&model, ctx.cfg.seed.wrapping_add(1))?;
    let mut rd = ctx.run_dir()?;
    let recs = (0..n)
        .map(|i| {
            let mut r = PuzzleRecord::new(format!("fixture{i:04}"), &plant.clean_fen, plant.pv.clone(), 1500)?;
            r.corruption = Some(CorruptionCandidate {
                fen: plant.corrupted_fen.clone(),
                mutation: Mutation::RemovePawn { square: plant.carrier },
                diagnostics: None,
            });
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    model.save(&rd.path("model"))?;
    weak.save(&rd.path("weak"))?;
    rd.register("model");
    rd.register("weak");
    save_puzzles(&mut rd, "puzzles.jsonl", &recs)?;
    let mut csv = String::from("PuzzleId,FEN,Moves,Rating\n");
    for r in &recs {
        csv.push_str(&format!("{},{FIXTURE_PRE_FEN},{FIXTURE_MOVES},{}\n", r.id, r.rating));
    }
    rd.write_text("puzzles.csv", &csv)?;
    rd.write_json("plant.json", &plant)?;
    stamp_model(&mut rd, &model);
    rd.manifest.weak_model_hash = Some(weak.fingerprint().to_string());
    stamp_dataset(&mut rd, &recs);
    let out = rd.finish()?;
    println!("fixture with {n} puzzles -> {}", out.display());
    Ok(())
}
