// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria 1 to 6 run on synthetic fixtures and always run. Criteria 7 to
//! 11 need real weights and the puzzle dump:
//!
//! * `LOOKAHEAD_WEIGHTS`: strong model archive
//! * `LOOKAHEAD_WEAK_WEIGHTS`: weak model archive
//! * `LOOKAHEAD_PUZZLES`: Lichess puzzle CSV
//! * `LOOKAHEAD_SAMPLE` (optional): cap on the filtered puzzles used by
//!   criteria 8 to 11, first N by id. Unset means all of them.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lookahead::chess::{Board, Square};
use lookahead::corruption::find_corruption;
use lookahead::heads::{detect_piece_heads, max_entry_statistic, sample_boards, DEFAULT_THRESHOLD};
use lookahead::interventions::{
    ablate_attention_entries, classify_squares, corrupted_squares, entry_experiment, head_sweep, piece_head_ablation,
    puzzle_context, residual_sweep, EntryOrientation, HeadRef, PatchContext, SquareClass,
};
use lookahead::model::synthetic::default_planted_model;
use lookahead::model::{
    policy_distribution, random_init_like, ActivationSite, ForwardTrace, HookSet, Model, ModelSpec, TraceLevel,
};
use lookahead::probes::{
    cache_activations, evaluate, loss, loss_and_grad, planted_store, train_probe, Example, Hyper, ProbeParams, Stage,
};
use lookahead::puzzles::{
    filter_puzzle, ingest_lichess_csv, limit_by_id, train_eval_split, FilterVerdict, PuzzleRecord, PuzzleThresholds,
    Subsplit,
};
use lookahead::stats::{percentile_ci, propagate, PercentileCurve};
use lookahead::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<(bool, String)>;

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let res = f();
    let took = t.elapsed();
    let (passed, detail) = match res {
        Ok((p, d)) => (p, d),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = limit.is_none_or(|l| took <= l);
    let ok = passed && in_time;
    let budget = limit.map(|l| format!(" (limit {:.0}s)", l.as_secs_f64())).unwrap_or_default();
    println!("{} [{n}] {name}: {detail}; {:.2}s{budget}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    ok
}

// ---------- desk scale ----------

fn c1_perft() -> Outcome {
    let b = Board::start();
    let want = [20u64, 400, 8902, 197281];
    let got: Vec<u64> = (1..=4).map(|d| b.perft(d)).collect();
    Ok((got == want, format!("perft 1..4 = {got:?}")))
}

fn c2_identity() -> Outcome {
    let (m, p) = default_planted_model(7)?;
    let b = p.clean_board()?;
    let ctx = PatchContext::new(&m, "identity", &b, &b, p.planted_move())?;
    let res = residual_sweep(&ctx, [SquareClass::Other; 64])?;
    let heads = head_sweep(&ctx)?;
    let all: Vec<f64> = res.records.iter().chain(&heads).map(|r| r.effect.delta).collect();
    let nonzero = all.iter().filter(|d| **d != 0.0).count();
    Ok((nonzero == 0 && all.len() == m.spec().residual_site_count() + m.spec().head_site_count(), format!("{} sites, {nonzero} non-zero", all.len())))
}

fn c3_planted() -> Outcome {
    let (m, p) = default_planted_model(7)?;
    let clean = p.clean_board()?;
    let ctx = PatchContext::new(&m, "planted", &clean, &p.corrupted_board()?, p.planted_move())?;
    let res = residual_sweep(&ctx, [SquareClass::Other; 64])?;
    let flagged: BTreeSet<Square> = res
        .records
        .iter()
        .filter(|r| r.effect.delta.abs() > 0.5)
        .filter_map(|r| match r.site {
            ActivationSite::Residual { square, .. } => Some(square),
            _ => None,
        })
        .collect();
    let heads: Vec<(usize, usize)> = head_sweep(&ctx)?
        .iter()
        .filter(|r| r.effect.delta.abs() > 0.5)
        .map(|r| (r.site.layer(), r.site.head().unwrap()))
        .collect();
    let squares_ok = flagged == BTreeSet::from([p.carrier, p.readout]);
    let heads_ok = heads == [(p.planted_layer, p.planted_head)];

    let (l, h) = (p.planted_layer, p.planted_head);
    let top_after = |entries: &[(usize, usize, Square, Square)]| -> Result<_> {
        let mut hooks = HookSet::new();
        for &(layer, head, query, key) in entries {
            hooks.zero(ActivationSite::AttnEntry { layer, head, query, key })?;
        }
        let out = m.forward_board(&clean, &hooks, TraceLevel::None)?;
        Ok(policy_distribution(&out.policy, &clean)?.best())
    };
    let entry = (l, h, p.readout, p.carrier);
    let complement: Vec<_> =
        Square::all().flat_map(|q| Square::all().map(move |k| (l, h, q, k))).filter(|e| *e != entry).collect();
    let base = top_after(&[])?;
    let single_changes = top_after(&[entry])? != base;
    let complement_keeps = top_after(&complement)? == base;
    let eff = ablate_attention_entries(&m, &clean, &[entry], p.planted_move())?;
    Ok((
        squares_ok && heads_ok && single_changes && complement_keeps && complement.len() == 4095,
        format!(
            "flagged squares {flagged:?}, heads {heads:?}; entry ablation changes top move: {single_changes} (delta {:.2}); complement keeps it: {complement_keeps}",
            eff.delta
        ),
    ))
}

fn c4_probes() -> Outcome {
    let d = 5;
    let mut p = ProbeParams::init(3, d, 0, Stage::Source, 11);
    p.c = -0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let res: Vec<Vec<f64>> = (0..5).map(|_| (0..64 * d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let batch: Vec<Example> = res
        .iter()
        .enumerate()
        .map(|(i, r)| Example { res: r, anchor: Square::from_index((7 * i + 3) % 64), label: Square::from_index((11 * i + 5) % 64) })
        .collect();
    let (_, g) = loss_and_grad(&p, &batch);
    let analytic: Vec<f64> = g.u.iter().chain(&g.v).copied().chain([g.c]).collect();
    let n_uv = p.u.len();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let at = |s: f64| {
            let mut q = p.clone();
            if i < n_uv {
                q.u[i] += s;
            } else if i < 2 * n_uv {
                q.v[i - n_uv] += s;
            } else {
                q.c += s;
            }
            loss(&q, &batch)
        };
        let h = 1e-5;
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8));
    }

    let store = planted_store(1000, 8, 5);
    let ids: Vec<String> = store.ids().into_iter().collect();
    let cut = ids.len() * 7 / 10;
    let train: BTreeSet<String> = ids[..cut].iter().cloned().collect();
    let eval: BTreeSet<String> = ids[cut..].iter().cloned().collect();
    let hyper = Hyper { rank: 4, epochs: 8, seed: 2, ..Hyper::default() };
    let t = train_probe(&store, 0, Stage::Target, &train, &hyper)?;
    let s = train_probe(&store, 0, Stage::Source, &train, &hyper)?;
    let acc = evaluate(&t.params, &s.params, &store, &train, &eval)?;
    Ok((
        worst <= 1e-4 && acc.target_acc == 1.0 && acc.source_acc == 1.0 && acc.pipeline_acc == 1.0,
        format!("gradient error {worst:.1e}; held-out t3 {:.3}, s3 {:.3}, both {:.3}", acc.target_acc, acc.source_acc, acc.pipeline_acc),
    ))
}

fn c5_stats() -> Outcome {
    // exponential(1) samples; true quantile at p is -ln(1 - p)
    let (n, p, trials) = (150, 0.25, 1000);
    let truth = -(1.0f64 - p).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let (lo, hi) = percentile_ci(&xs, p, 0.95)?;
        hits += (lo <= truth && truth <= hi) as usize;
    }
    let coverage = hits as f64 / trials as f64;
    let five = propagate(&[3.0, 4.0])?;
    Ok((coverage >= 0.93 && five == 5.0, format!("coverage {coverage:.3} over {trials} trials; propagate(3, 4) = {five}")))
}

fn c6_trace() -> Outcome {
    let (m, p) = default_planted_model(7)?;
    let out = m.forward_board(&p.corrupted_board()?, &HookSet::new(), TraceLevel::Full)?;
    let spec = m.spec();
    let mut worst: f64 = 0.0;
    for l in 0..spec.n_layers {
        for h in 0..spec.n_heads {
            let a = ForwardTrace::head_matrix(&out.trace.attn, l, h).unwrap();
            let q = ForwardTrace::head_matrix(&out.trace.qk_scores, l, h).unwrap();
            let s = ForwardTrace::head_matrix(&out.trace.smolgen_scores, l, h).unwrap();
            for r in 0..64 {
                let z: Vec<f64> = (0..64).map(|k| q[r * 64 + k] as f64 + s[r * 64 + k] as f64).collect();
                let lse = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let den: f64 = z.iter().map(|x| (x - lse).exp()).sum();
                for k in 0..64 {
                    worst = worst.max(((z[k] - lse).exp() / den - a[r * 64 + k] as f64).abs());
                }
            }
        }
    }
    let full = ModelSpec::full_size();
    let entries = full.n_layers * full.n_heads * 64 * 64;
    let sites = full.n_layers * 64;
    let wdl: f64 = out.value.wdl.iter().map(|&x| x as f64).sum();
    let ok = worst <= 1e-5
        && entries == 1_474_560
        && full.attention_entry_count() == entries
        && sites == 960
        && full.residual_site_count() == sites
        && (wdl - 1.0).abs() <= 1e-6;
    Ok((ok, format!("softmax error {worst:.1e}; {entries} entries; {sites} residual sites; WDL sum {wdl:.9}")))
}

// ---------- full scale ----------

struct Full {
    strong: Model,
    raw: Vec<PuzzleRecord>,
    filtered: Vec<PuzzleRecord>,
    /// Filtered puzzles with a corruption, capped by `LOOKAHEAD_SAMPLE`.
    corrupted: Vec<PuzzleRecord>,
    /// Filtered puzzles, capped by `LOOKAHEAD_SAMPLE`.
    sample: Vec<PuzzleRecord>,
}

fn env_path(k: &str) -> Option<PathBuf> {
    std::env::var_os(k).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn full_inputs() -> Option<(PathBuf, PathBuf, PathBuf)> {
    Some((env_path("LOOKAHEAD_WEIGHTS")?, env_path("LOOKAHEAD_WEAK_WEIGHTS")?, env_path("LOOKAHEAD_PUZZLES")?))
}

fn full() -> &'static Result<Full, String> {
    static FULL: OnceLock<Result<Full, String>> = OnceLock::new();
    FULL.get_or_init(|| build_full().map_err(|e| e.to_string()))
}

fn build_full() -> Result<Full> {
    let (w, ww, csv) = full_inputs().expect("checked by caller");
    let strong = Model::load(&w)?;
    let weak = Model::load(&ww)?;
    let (raw, _) = ingest_lichess_csv(&csv, Default::default())?;
    let th = PuzzleThresholds::default();
    let verdicts = raw.par_iter().map(|p| filter_puzzle(&strong, &weak, p, &th)).collect::<Result<Vec<_>>>()?;
    let filtered: Vec<PuzzleRecord> =
        raw.iter().zip(&verdicts).filter(|(_, v)| **v == FilterVerdict::Keep).map(|(p, _)| p.clone()).collect();
    let cap = std::env::var("LOOKAHEAD_SAMPLE").ok().and_then(|s| s.parse().ok());
    let sample = limit_by_id(&filtered, cap);
    let fc = Default::default();
    let found = sample
        .par_iter()
        .map(|p| Ok(find_corruption(&strong, &weak, &p.board()?, p.best_move(), &fc)?.selected))
        .collect::<Result<Vec<_>>>()?;
    let corrupted = sample
        .iter()
        .zip(found)
        .filter_map(|(p, c)| {
            let mut p = p.clone();
            p.corruption = Some(c?);
            Some(p)
        })
        .collect();
    Ok(Full { strong, raw, filtered, corrupted, sample })
}

fn with_full(f: impl FnOnce(&Full) -> Outcome) -> Outcome {
    match full() {
        Ok(x) => f(x),
        Err(e) => Err(Error::Dataset(e.clone())),
    }
}

fn same_fraction(ps: &[PuzzleRecord]) -> f64 {
    ps.iter().filter(|p| p.subsplit == Subsplit::SameTarget).count() as f64 / ps.len().max(1) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn c7_dataset(x: &Full) -> Outcome {
    let n = x.filtered.len() as f64;
    let (same, raw) = (same_fraction(&x.filtered), same_fraction(&x.raw));
    let ok = (n - 22_500.0).abs() <= 0.15 * 22_500.0 && (same - 0.83).abs() <= 0.03 && (raw - 0.47).abs() <= 0.03;
    Ok((ok, format!("{} puzzles kept of {}; same-target {:.1}% vs raw {:.1}%", n, x.raw.len(), 100.0 * same, 100.0 * raw)))
}

fn need_layers(m: &Model, n: usize) -> Result<()> {
    if m.spec().n_layers < n {
        return Err(Error::Spec(format!("needs at least {n} layers, model has {}", m.spec().n_layers)));
    }
    Ok(())
}

fn c8_residual(x: &Full) -> Outcome {
    let layer = 9;
    need_layers(&x.strong, layer + 1)?;
    let rows = x
        .corrupted
        .par_iter()
        .map(|p| {
            let ctx = puzzle_context(&x.strong, p)?;
            let s = residual_sweep(&ctx, classify_squares(&corrupted_squares(p)?, Some(p.t(1)), Some(p.t(3))))?;
            Ok((s.class_mean(layer, SquareClass::T3), s.max_other(layer)))
        })
        .collect::<Result<Vec<_>>>()?;
    let t3: Vec<f64> = rows.iter().filter_map(|r| r.0).collect();
    let other: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    let (mt3, mo) = (mean(&t3), mean(&other));
    Ok(((1.6..=2.2).contains(&mt3) && (0.4..=0.7).contains(&mo), format!("layer 10 t3 mean {mt3:.3} (n {}); other-square max mean {mo:.3}", t3.len())))
}

fn c9_l12h12(x: &Full) -> Outcome {
    let l12h12 = HeadRef { layer: 11, head: 11 };
    need_layers(&x.strong, 12)?;
    let spec = x.strong.spec();
    let sweeps = x.corrupted.par_iter().map(|p| head_sweep(&puzzle_context(&x.strong, p)?)).collect::<Result<Vec<_>>>()?;
    let n_heads = spec.n_layers * spec.n_heads;
    let mut sums = vec![0.0; n_heads];
    for s in &sweeps {
        for (i, r) in s.iter().enumerate() {
            sums[i] += r.effect.delta;
        }
    }
    let top = (0..n_heads).max_by(|&a, &b| sums[a].total_cmp(&sums[b])).unwrap_or(0);
    let top = HeadRef { layer: top / spec.n_heads, head: top % spec.n_heads };
    let stat = max_entry_statistic(&x.strong, &x.sample, l12h12, EntryOrientation::QueryT1)?;
    let singles = x
        .sample
        .par_iter()
        .map(|p| match entry_experiment(&x.strong, p, l12h12, EntryOrientation::QueryT1) {
            Ok(e) => Ok(Some(e.single.delta)),
            Err(Error::Degenerate { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let singles: Vec<f64> = singles.into_iter().flatten().collect();
    let big = singles.iter().filter(|d| **d > 1.5).count() as f64 / singles.len().max(1) as f64;
    let ok = n_heads == 360 && top == l12h12 && (stat.fraction() - 0.298).abs() <= 0.03 && big >= 0.10;
    Ok((ok, format!("top head {top} of {n_heads}; max-entry fraction {:.3}; single-entry delta > 1.5 in {:.1}%", stat.fraction(), 100.0 * big)))
}

fn c10_piece(x: &Full) -> Outcome {
    let tags = detect_piece_heads(&x.strong, &sample_boards(1000, 0), DEFAULT_THRESHOLD, 0)?;
    let eligible: Vec<&PuzzleRecord> = x.corrupted.iter().filter(|p| p.pv.len() > 3).collect();
    let recs = eligible
        .par_iter()
        .map(|p| match piece_head_ablation(&x.strong, p, &tags, 0) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Degenerate { .. } | Error::NoTaggedHeads(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let recs: Vec<_> = recs.into_iter().flatten().collect();
    let matched: Vec<f64> = recs.iter().map(|r| r.matched.delta).collect();
    let other: Vec<f64> = recs.iter().map(|r| r.other_type.delta).collect();
    let random: Vec<f64> = recs.iter().map(|r| r.random.delta).collect();
    let frac = matched.iter().filter(|d| **d >= 1.5).count() as f64 / matched.len().max(1) as f64;
    let (cm, co, cr) = (PercentileCurve::standard(&matched)?, PercentileCurve::standard(&other)?, PercentileCurve::standard(&random)?);
    let dominates = (0..cm.p.len())
        .filter(|&i| (0.2..=0.9).contains(&cm.p[i]))
        .all(|i| cm.value[i] >= co.value[i] && cm.value[i] >= cr.value[i]);
    Ok((frac >= 0.55 && dominates, format!("{} tagged heads; matched delta >= 1.5 in {:.1}% of {}; dominates baselines: {dominates}", tags.len(), 100.0 * frac, recs.len())))
}

fn c11_probes(x: &Full) -> Outcome {
    let layer = 11;
    need_layers(&x.strong, 12)?;
    let (train, eval) = train_eval_split(&x.sample, 0.7, 0);
    let train_ids: BTreeSet<String> = train.iter().map(|p| p.id.clone()).collect();
    let eval_ids: BTreeSet<String> = eval.iter().map(|p| p.id.clone()).collect();
    let acc_of = |m: &Model| -> Result<f64> {
        let store = cache_activations(m, &x.sample, &[layer])?;
        let h = Hyper::default();
        let t = train_probe(&store, layer, Stage::Target, &train_ids, &h)?;
        let s = train_probe(&store, layer, Stage::Source, &train_ids, &h)?;
        Ok(evaluate(&t.params, &s.params, &store, &train_ids, &eval_ids)?.target_acc)
    };
    let real = acc_of(&x.strong)?;
    let random = acc_of(&random_init_like(&x.strong, 0)?)?;
    Ok((real >= 0.88 && random <= 0.25, format!("layer 12 target accuracy {real:.3}; random-init {random:.3}")))
}

fn main() {
    let mut mandatory = true;
    mandatory &= report(1, "perft", Some(Duration::from_secs(10)), c1_perft);
    mandatory &= report(2, "identity patch", Some(Duration::from_secs(1)), c2_identity);
    mandatory &= report(3, "planted recovery", Some(Duration::from_secs(10)), c3_planted);
    mandatory &= report(4, "probe machinery", Some(Duration::from_secs(30)), c4_probes);
    mandatory &= report(5, "statistics", None, c5_stats);
    mandatory &= report(6, "trace identities", None, c6_trace);

    let optional: [(usize, &str, fn(&Full) -> Outcome); 5] = [
        (7, "filtered dataset", c7_dataset),
        (8, "residual patching", c8_residual),
        (9, "L12H12", c9_l12h12),
        (10, "piece-head ablation", c10_piece),
        (11, "probe accuracy", c11_probes),
    ];
    let mut full_ok = true;
    if full_inputs().is_some() {
        for (n, name, f) in optional {
            full_ok &= report(n, name, None, || with_full(f));
        }
    } else {
        for (n, name, _) in optional {
            println!("SKIP [{n}] {name}: set LOOKAHEAD_WEIGHTS, LOOKAHEAD_WEAK_WEIGHTS and LOOKAHEAD_PUZZLES");
        }
    }
    if !(mandatory && full_ok) {
        eprintln!("acceptance: failures above");
        std::process::exit(1);
    }
}
