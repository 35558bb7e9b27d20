// SPDX-License-Identifier: MIT OR Apache-2.0

//! Invariant suite on the synthetic planted model. Needs no downloads.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chess::{Board, Square};
use crate::error::Result;
use crate::interventions::{
    ablate_attention_entries, classify_squares, head_sweep, residual_sweep, Effect, PatchContext,
};
use crate::model::synthetic::{default_planted_model, PlantDescriptor};
use crate::model::{policy_distribution, ActivationSite, ForwardTrace, HookSet, Model, ModelSpec, TraceLevel};
use crate::probes::{evaluate, loss, loss_and_grad, planted_store, train_probe, Example, Hyper, ProbeParams, Stage};
use crate::stats::{percentile_ci, propagate};

/// |delta| above this counts as an effect on the planted model.
pub const FLAG_THRESHOLD: f64 = 0.5;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

pub const CHECKS: &[(&str, CheckFn)] = &[
    ("perft", perft),
    ("identity-patch", identity_patch),
    ("planted-recovery", planted_recovery),
    ("probe-machinery", probe_machinery),
    ("statistics", statistics),
    ("trace-identities", trace_identities),
];

/// Runs every check; errors count as failures.
pub fn run_all() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            Check { name: name.to_string(), passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}

fn perft() -> Result<(bool, String)> {
    let b = Board::start();
    let got: Vec<u64> = (1..=4).map(|d| b.perft(d)).collect();
    Ok((got == [20, 400, 8902, 197281], format!("{got:?}")))
}

fn planted() -> Result<(Model, PlantDescriptor)> {
    default_planted_model(7)
}

fn identity_patch() -> Result<(bool, String)> {
    let (m, p) = planted()?;
    let b = p.clean_board()?;
    let ctx = PatchContext::new(&m, "identity", &b, &b, p.planted_move())?;
    let res = residual_sweep(&ctx, classify_squares(&[], None, None))?;
    let heads = head_sweep(&ctx)?;
    let nonzero = res.records.iter().chain(&heads).filter(|r| r.effect.delta != 0.0).count();
    Ok((nonzero == 0, format!("{} sites, {nonzero} non-zero", res.records.len() + heads.len())))
}

fn planted_recovery() -> Result<(bool, String)> {
    let (m, p) = planted()?;
    let clean = p.clean_board()?;
    let ctx = PatchContext::new(&m, "planted", &clean, &p.corrupted_board()?, p.planted_move())?;
    let res = residual_sweep(&ctx, classify_squares(&[p.carrier], Some(p.readout), Some(p.carrier)))?;
    let mut bad = Vec::new();
    for r in &res.records {
        let ActivationSite::Residual { layer, square } = r.site else { continue };
        let want = if layer < p.planted_layer { square == p.carrier } else { square == p.readout };
        if (r.effect.delta.abs() > FLAG_THRESHOLD) != want {
            bad.push(r.site.to_string());
        }
    }
    for r in head_sweep(&ctx)? {
        let want = r.site.layer() == p.planted_layer && r.site.head() == Some(p.planted_head);
        if (r.effect.delta.abs() > FLAG_THRESHOLD) != want {
            bad.push(r.site.to_string());
        }
    }
    let (l, h) = (p.planted_layer, p.planted_head);
    let top = |entries: &[(usize, usize, Square, Square)]| -> Result<_> {
        let mut hooks = HookSet::new();
        for &(layer, head, query, key) in entries {
            hooks.zero(ActivationSite::AttnEntry { layer, head, query, key })?;
        }
        let out = m.forward_board(&clean, &hooks, TraceLevel::None)?;
        Ok(policy_distribution(&out.policy, &clean)?.best())
    };
    let single = [(l, h, p.readout, p.carrier)];
    let complement: Vec<_> = (0..4096)
        .map(|i| (l, h, Square::from_index(i / 64), Square::from_index(i % 64)))
        .filter(|e| *e != single[0])
        .collect();
    let planted_move = Some(p.planted_move());
    let flips = top(&single)? != planted_move;
    let keeps = top(&complement)? == planted_move;
    let Effect { delta, .. } = ablate_attention_entries(&m, &clean, &single, p.planted_move())?;
    let ok = bad.is_empty() && flips && keeps;
    Ok((ok, format!("misflagged {bad:?}; single entry flips top move: {flips} (delta {delta:.3}); complement keeps it: {keeps}")))
}

fn probe_machinery() -> Result<(bool, String)> {
    // finite differences
    let d = 6;
    let mut p = ProbeParams::init(3, d, 0, Stage::Target, 4);
    p.c = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res: Vec<Vec<f64>> = (0..4).map(|_| (0..64 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let batch: Vec<Example> = res
        .iter()
        .enumerate()
        .map(|(i, r)| Example { res: r, anchor: Square::from_index(9 * i + 1), label: Square::from_index(13 * i + 2) })
        .collect();
    let (_, g) = loss_and_grad(&p, &batch);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = g.u.iter().chain(&g.v).copied().collect();
    for (i, &a) in analytic.iter().enumerate() {
        let bump = |s: f64| {
            let mut q = p.clone();
            if i < q.u.len() {
                q.u[i] += s;
            } else {
                q.v[i - q.u.len()] += s;
            }
            loss(&q, &batch)
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
        worst = worst.max(err);
    }
    // planted recovery
    let store = planted_store(1200, 8, 1);
    let ids: Vec<String> = store.ids().into_iter().collect();
    let k = ids.len() * 7 / 10;
    let train = ids[..k].iter().cloned().collect();
    let eval_ids = ids[k..].iter().cloned().collect();
    let hyper = Hyper { rank: 4, epochs: 8, ..Hyper::default() };
    let t = train_probe(&store, 0, Stage::Target, &train, &hyper)?;
    let s = train_probe(&store, 0, Stage::Source, &train, &hyper)?;
    let acc = evaluate(&t.params, &s.params, &store, &train, &eval_ids)?;
    let ok = worst <= 1e-4 && acc.target_acc == 1.0 && acc.source_acc == 1.0;
    Ok((ok, format!("worst relative gradient error {worst:.2e}; target {:.4}, source {:.4}", acc.target_acc, acc.source_acc)))
}

fn statistics() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (n, p, trials) = (200, 0.5, 1000);
    let mut hits = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = percentile_ci(&xs, p, 0.95)?;
        hits += (lo <= p && p <= hi) as usize;
    }
    let coverage = hits as f64 / trials as f64;
    let five = propagate(&[3.0, 4.0])?;
    Ok((coverage >= 0.93 && five == 5.0, format!("coverage {coverage:.3}; propagate(3,4) = {five}")))
}

fn trace_identities() -> Result<(bool, String)> {
    let (m, p) = planted()?;
    let out = m.forward_board(&p.clean_board()?, &HookSet::new(), TraceLevel::Full)?;
    let spec = m.spec();
    let mut worst: f64 = 0.0;
    for layer in 0..spec.n_layers {
        for head in 0..spec.n_heads {
            let a = ForwardTrace::head_matrix(&out.trace.attn, layer, head).expect("full trace");
            let q = ForwardTrace::head_matrix(&out.trace.qk_scores, layer, head).expect("full trace");
            let s = ForwardTrace::head_matrix(&out.trace.smolgen_scores, layer, head).expect("full trace");
            for row in 0..64 {
                let z: Vec<f64> = (0..64).map(|k| (q[row * 64 + k] + s[row * 64 + k]) as f64).collect();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|x| (x - max).exp()).sum();
                for k in 0..64 {
                    let want = (z[k] - max).exp() / sum;
                    worst = worst.max((want - a[row * 64 + k] as f64).abs());
                }
            }
        }
    }
    let full = ModelSpec::full_size();
    let (entries, sites) = (full.attention_entry_count(), full.residual_site_count());
    let wdl: f64 = out.value.wdl.iter().map(|&x| x as f64).sum();
    let ok = worst <= 1e-5 && entries == 1_474_560 && sites == 960 && (wdl - 1.0).abs() <= 1e-6;
    Ok((ok, format!("softmax error {worst:.2e}; entries {entries}; residual sites {sites}; wdl sum {wdl}")))
}
