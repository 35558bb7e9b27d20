// SPDX-License-Identifier: MIT OR Apache-2.0

//! Low-rank bilinear probes that read future move squares from residuals.
//!
//! `logit_y = (U r_y) · (V r_anchor) + c`, trained with cross-entropy over
//! the 64 squares and Adam. Arithmetic is f64 throughout.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chess::Square;
use crate::error::{Error, Result};
use crate::model::archive::{read_archive, write_archive, NamedTensor, TensorData};
use crate::model::{policy_distribution, HookSet, Model, TraceLevel};
use crate::puzzles::PuzzleRecord;
use crate::stats::{accuracy_sigma, mean_sem, propagate};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Anchor t1, label t3.
    Target,
    /// Anchor t3, label s3.
    Source,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProbeParams {
    pub rank: usize,
    pub d: usize,
    /// k×d, row-major.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
    pub layer: usize,
    pub stage: Stage,
}

impl ProbeParams {
    pub fn zeros(rank: usize, d: usize, layer: usize, stage: Stage) -> ProbeParams {
        ProbeParams { rank, d, u: vec![0.0; rank * d], v: vec![0.0; rank * d], c: 0.0, layer, stage }
    }

    /// Gaussian entries with std `1/sqrt(d)`, zero bias.
    pub fn init(rank: usize, d: usize, layer: usize, stage: Stage, seed: u64) -> ProbeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut p = ProbeParams::zeros(rank, d, layer, stage);
        p.u.iter_mut().chain(p.v.iter_mut()).for_each(|x| *x = n.sample(&mut rng));
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.rank * self.d || self.v.len() != self.rank * self.d {
            return Err(Error::Probe("U/V shape does not match rank × width".into()));
        }
        if !self.u.iter().chain(&self.v).all(|x| x.is_finite()) || !self.c.is_finite() {
            return Err(Error::Probe("non-finite probe parameter".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        let meta = serde_json::json!({ "probe": { "rank": self.rank, "d": self.d, "layer": self.layer, "stage": self.stage } });
        let t = |name: &str, shape: Vec<usize>, data: Vec<f64>| NamedTensor { name: name.into(), shape, data: TensorData::F64(data) };
        write_archive(
            dir,
            meta,
            &[t("probe.u", vec![self.rank, self.d], self.u.clone()), t("probe.v", vec![self.rank, self.d], self.v.clone()), t("probe.c", vec![1], vec![self.c])],
        )
    }

    pub fn load(path: &Path) -> Result<ProbeParams> {
        let (manifest, tensors) = read_archive(path)?;
        let m = &manifest.meta["probe"];
        let get = |k: &str| m[k].as_u64().map(|x| x as usize).ok_or_else(|| Error::Probe(format!("probe metadata lacks {k}")));
        let stage: Stage = serde_json::from_value(m["stage"].clone())?;
        let mut p = ProbeParams::zeros(get("rank")?, get("d")?, get("layer")?, stage);
        for t in tensors {
            let TensorData::F64(data) = t.data else {
                return Err(Error::archive(t.name, "probe tensors are f64"));
            };
            match t.name.as_str() {
                "probe.u" => p.u = data,
                "probe.v" => p.v = data,
                "probe.c" => p.c = *data.first().ok_or_else(|| Error::archive("probe.c", "empty"))?,
                other => return Err(Error::archive(other, "unexpected tensor in probe archive")),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// `M x` for a k×d matrix and a d-vector.
fn project(m: &[f64], k: usize, d: usize, x: &[f64]) -> Vec<f64> {
    (0..k).map(|i| m[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// 64 logits for residuals `res` (64×d) with the given anchor square.
pub fn probe_logits(p: &ProbeParams, res: &[f64], anchor: Square) -> [f64; 64] {
    let (k, d) = (p.rank, p.d);
    let a = project(&p.v, k, d, &res[anchor.index() * d..(anchor.index() + 1) * d]);
    let mut out = [0.0; 64];
    for (y, o) in out.iter_mut().enumerate() {
        let b = project(&p.u, k, d, &res[y * d..(y + 1) * d]);
        *o = b.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + p.c;
    }
    out
}

/// Index of the largest logit; ties go to the lower square.
pub fn argmax(logits: &[f64; 64]) -> Square {
    let mut best = 0;
    for i in 1..64 {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    Square::from_index(best)
}

fn softmax64(logits: &[f64; 64]) -> [f64; 64] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = logits.map(|l| (l - max).exp());
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= z);
    e
}

/// One training example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub res: &'a [f64],
    pub anchor: Square,
    pub label: Square,
}

/// Gradients in the same layout as the parameters.
#[derive(Clone, PartialEq, Debug)]
pub struct Grad {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

/// Mean cross-entropy over `batch` and its analytic gradient.
pub fn loss_and_grad(p: &ProbeParams, batch: &[Example]) -> (f64, Grad) {
    let (k, d) = (p.rank, p.d);
    let mut g = Grad { u: vec![0.0; k * d], v: vec![0.0; k * d], c: 0.0 };
    let mut loss = 0.0;
    for ex in batch {
        let logits = probe_logits(p, ex.res, ex.anchor);
        let probs = softmax64(&logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - logits[ex.label.index()];
        // dL/dlogit_y = p_y - [y == label]; rbar = Σ_y g_y r_y.
        let mut rbar = vec![0.0; d];
        let mut gsum = 0.0;
        for y in 0..64 {
            let gy = probs[y] - if y == ex.label.index() { 1.0 } else { 0.0 };
            gsum += gy;
            for (r, x) in rbar.iter_mut().zip(&ex.res[y * d..(y + 1) * d]) {
                *r += gy * x;
            }
        }
        let ra = &ex.res[ex.anchor.index() * d..(ex.anchor.index() + 1) * d];
        let a = project(&p.v, k, d, ra);
        let urbar = project(&p.u, k, d, &rbar);
        for i in 0..k {
            for j in 0..d {
                g.u[i * d + j] += a[i] * rbar[j];
                g.v[i * d + j] += urbar[i] * ra[j];
            }
        }
        g.c += gsum;
    }
    let n = batch.len().max(1) as f64;
    g.u.iter_mut().chain(g.v.iter_mut()).for_each(|x| *x /= n);
    g.c /= n;
    (loss / n, g)
}

/// Mean loss only.
pub fn loss(p: &ProbeParams, batch: &[Example]) -> f64 {
    loss_and_grad(p, batch).0
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Hyper {
    pub rank: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { rank: 32, lr: 1e-2, batch: 64, epochs: 5, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0 }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, h: &Hyper, params: &mut [&mut f64], grads: &[f64]) {
        self.t += 1;
        let (b1t, b2t) = (1.0 - h.beta1.powi(self.t), 1.0 - h.beta2.powi(self.t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
            **p -= h.lr * (self.m[i] / b1t) / ((self.v[i] / b2t).sqrt() + h.eps);
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Adam on mini-batches in a seeded order; the incomplete final batch of
/// each epoch is dropped.
pub fn train(examples: &[Example], d: usize, layer: usize, stage: Stage, h: &Hyper) -> Result<TrainedProbe> {
    if examples.len() < h.batch || h.batch == 0 {
        return Err(Error::Probe(format!("{} training examples, fewer than one batch of {}", examples.len(), h.batch)));
    }
    let mut p = ProbeParams::init(h.rank, d, layer, stage, h.seed);
    let n_params = 2 * h.rank * d + 1;
    let mut adam = Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_loss = Vec::with_capacity(h.epochs);
    for epoch in 0..h.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks_exact(h.batch) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
            let (l, g) = loss_and_grad(&p, &batch);
            if !l.is_finite() {
                return Err(Error::Probe(format!(
                    "non-finite loss {l} at epoch {epoch} batch {batches} (layer {}, {:?}, lr {})",
                    layer + 1,
                    stage,
                    h.lr
                )));
            }
            total += l;
            batches += 1;
            let grads: Vec<f64> = g.u.iter().chain(&g.v).cloned().chain(std::iter::once(g.c)).collect();
            let mut refs: Vec<&mut f64> = p.u.iter_mut().chain(p.v.iter_mut()).chain(std::iter::once(&mut p.c)).collect();
            adam.step(h, &mut refs, &grads);
        }
        epoch_loss.push(total / batches as f64);
    }
    Ok(TrainedProbe { params: p, epoch_loss })
}

/// Cached residuals and labels for one puzzle.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct StoreEntry {
    pub puzzle_id: String,
    /// Target of the model's own top move, model frame.
    pub t1: Square,
    pub t3: Square,
    pub s3: Square,
    /// One 64×d matrix per stored layer, in `ActivationStore::layers` order.
    pub residuals: Vec<Vec<f64>>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ActivationStore {
    pub model_fingerprint: String,
    pub dataset_hash: String,
    pub d: usize,
    /// 0-based layers.
    pub layers: Vec<usize>,
    pub entries: Vec<StoreEntry>,
}

/// Content hash of a dataset: ids, FENs and PVs in id order.
pub fn dataset_hash(dataset: &[PuzzleRecord]) -> String {
    let mut recs: Vec<&PuzzleRecord> = dataset.iter().collect();
    recs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut h = Sha256::new();
    for r in recs {
        h.update(r.id.as_bytes());
        h.update([0]);
        h.update(r.fen.as_bytes());
        h.update([0]);
        for m in &r.pv {
            h.update(m.uci().as_bytes());
            h.update(*b" ");
        }
        h.update(*b"\n");
    }
    hex::encode(h.finalize())
}

impl ActivationStore {
    fn layer_slot(&self, layer: usize) -> Result<usize> {
        self.layers
            .iter()
            .position(|&l| l == layer)
            .ok_or_else(|| Error::Probe(format!("layer {} not cached", layer + 1)))
    }

    /// Errors unless the store was built from this model and dataset.
    pub fn check_provenance(&self, model_fingerprint: &str, dataset_hash: &str) -> Result<()> {
        if self.model_fingerprint != model_fingerprint || self.dataset_hash != dataset_hash {
            return Err(Error::Probe("activation store was built from a different model or dataset".into()));
        }
        Ok(())
    }

    /// Training examples for one layer and stage over the listed puzzles.
    /// The source stage anchors at the true t3.
    pub fn examples<'a>(&'a self, layer: usize, stage: Stage, ids: &BTreeSet<String>) -> Result<Vec<Example<'a>>> {
        let slot = self.layer_slot(layer)?;
        Ok(self
            .entries
            .iter()
            .filter(|e| ids.contains(&e.puzzle_id))
            .map(|e| {
                let (anchor, label) = match stage {
                    Stage::Target => (e.t1, e.t3),
                    Stage::Source => (e.t3, e.s3),
                };
                Example { res: &e.residuals[slot], anchor, label }
            })
            .collect())
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.puzzle_id.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ActivationStore> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}

/// Runs the model on every puzzle and keeps the residual after each of
/// `layers` (0-based) together with the labels.
pub fn cache_activations(model: &Model, dataset: &[PuzzleRecord], layers: &[usize]) -> Result<ActivationStore> {
    let n = model.spec().n_layers;
    if let Some(&l) = layers.iter().find(|&&l| l >= n) {
        return Err(Error::Probe(format!("layer {} outside a {n}-layer model", l + 1)));
    }
    let mut sorted: Vec<&PuzzleRecord> = dataset.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let entries = sorted
        .par_iter()
        .map(|p| {
            let board = p.board()?;
            let out = model.forward_board(&board, &HookSet::new(), TraceLevel::Policy)?;
            let top = policy_distribution(&out.policy, &board)?.best().ok_or(Error::Terminal)?;
            let residuals = layers
                .iter()
                .map(|&l| out.trace.residual[l].as_ref().expect("residual traced").iter().map(|&x| x as f64).collect())
                .collect();
            Ok(StoreEntry { puzzle_id: p.id.clone(), t1: board.to_player_frame(top.target), t3: p.t(3), s3: p.s(3), residuals })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationStore {
        model_fingerprint: model.fingerprint().to_string(),
        dataset_hash: dataset_hash(dataset),
        d: model.spec().d_resid,
        layers: layers.to_vec(),
        entries,
    })
}

/// Trains one probe on the `train` ids.
pub fn train_probe(store: &ActivationStore, layer: usize, stage: Stage, train_ids: &BTreeSet<String>, h: &Hyper) -> Result<TrainedProbe> {
    let ex = store.examples(layer, stage, train_ids)?;
    train(&ex, store.d, layer, stage, h)
}

/// Predicts t3 from t1, then s3 from the predicted t3.
pub fn predict_third_move(target: &ProbeParams, source: &ProbeParams, res: &[f64], t1: Square) -> (Square, Square) {
    let t3 = argmax(&probe_logits(target, res, t1));
    let s3 = argmax(&probe_logits(source, res, t3));
    (t3, s3)
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProbeAccuracy {
    pub n: usize,
    pub target_acc: f64,
    /// Source probe anchored at the true t3.
    pub source_acc: f64,
    /// Both squares right with the predicted t3 as anchor.
    pub pipeline_acc: f64,
}

/// Accuracy on the `eval` ids; aborts if they overlap the training ids.
pub fn evaluate(
    target: &ProbeParams,
    source: &ProbeParams,
    store: &ActivationStore,
    train_ids: &BTreeSet<String>,
    eval_ids: &BTreeSet<String>,
) -> Result<ProbeAccuracy> {
    if let Some(id) = train_ids.intersection(eval_ids).next() {
        return Err(Error::Probe(format!("puzzle {id} is in both the training and evaluation split")));
    }
    if target.layer != source.layer {
        return Err(Error::Probe("target and source probes come from different layers".into()));
    }
    let slot = store.layer_slot(target.layer)?;
    let entries: Vec<&StoreEntry> = store.entries.iter().filter(|e| eval_ids.contains(&e.puzzle_id)).collect();
    if entries.is_empty() {
        return Err(Error::Probe("empty evaluation split".into()));
    }
    let (mut t, mut s, mut both) = (0usize, 0usize, 0usize);
    for e in &entries {
        let res = &e.residuals[slot];
        let (t3, s3) = predict_third_move(target, source, res, e.t1);
        t += (t3 == e.t3) as usize;
        s += (argmax(&probe_logits(source, res, e.t3)) == e.s3) as usize;
        both += (t3 == e.t3 && s3 == e.s3) as usize;
    }
    let n = entries.len();
    Ok(ProbeAccuracy { n, target_acc: t as f64 / n as f64, source_acc: s as f64 / n as f64, pipeline_acc: both as f64 / n as f64 })
}

/// Accuracy over several training seeds with the combined error bar.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SeededAccuracy {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub sigma_train: f64,
    pub sigma_acc: f64,
    pub sigma_total: f64,
}

impl SeededAccuracy {
    /// `runs` are accuracies of independently seeded probes on `n` items.
    pub fn from_runs(runs: Vec<f64>, n: usize) -> Result<SeededAccuracy> {
        if runs.is_empty() || n == 0 {
            return Err(Error::Stats("no runs to aggregate".into()));
        }
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        let sigma_train = if runs.len() >= 2 {
            let (_, sem) = mean_sem(&runs)?;
            sem * (runs.len() as f64).sqrt()
        } else {
            0.0
        };
        let sigma_acc = accuracy_sigma(mean, n);
        let sigma_total = propagate(&[sigma_train, sigma_acc])?;
        Ok(SeededAccuracy { runs, mean, sigma_train, sigma_acc, sigma_total })
    }
}

/// A synthetic store with a known bilinear structure. Per puzzle, random
/// distinct squares (t1, t3, s3) are drawn and the residual carries small
/// Gaussian noise plus one marker feature each at t1, t3 and s3, so a
/// rank-1 probe can recover both stages exactly.
pub fn planted_store(n: usize, d: usize, seed: u64) -> ActivationStore {
    assert!(d >= 4, "planted store needs at least 4 features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let entries = (0..n)
        .map(|i| {
            let mut sq: Vec<usize> = Vec::new();
            while sq.len() < 3 {
                let s = rng.random_range(0..64);
                if !sq.contains(&s) {
                    sq.push(s);
                }
            }
            let mut res: Vec<f64> = (0..64 * d).map(|_| noise.sample(&mut rng)).collect();
            // feature 0 marks t1, 1 marks t3, 2 marks s3
            for (f, &s) in sq.iter().enumerate() {
                res[s * d + f] += 1.0;
            }
            StoreEntry {
                puzzle_id: format!("planted{i:05}"),
                t1: Square::from_index(sq[0]),
                t3: Square::from_index(sq[1]),
                s3: Square::from_index(sq[2]),
                residuals: vec![res],
            }
        })
        .collect();
    ActivationStore { model_fingerprint: "planted".into(), dataset_hash: "planted".into(), d, layers: vec![0], entries }
}
