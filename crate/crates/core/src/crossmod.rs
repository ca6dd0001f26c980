//! Audio-visual distance learning and cross-modality localization.
//!
//! Two small MLPs embed a pooled visual vector and an audio vector into the
//! same `E`-dimensional space; synchronized pairs are pulled together and
//! mismatched ones pushed past a margin. A query of `l` consecutive segments
//! from one modality is then located in the other modality's `T` segments by
//! the window start with the least cumulative distance. Segment positions
//! are 0-based.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSequence, PairBatch};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::localizer::{read_checkpoint, restore, write_checkpoint};
use crate::nn::{seeded_rng, Activation, Adam, AdamConfig, Dense, ParamStore, Session};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvdlnConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub hidden: usize,
    pub embed: usize,
    pub margin: f64,
    pub seed: u64,
}

impl AvdlnConfig {
    pub fn new(visual_dim: usize, audio_dim: usize) -> Self {
        Self {
            visual_dim,
            audio_dim,
            hidden: 256,
            embed: 128,
            margin: 2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AvdlnModel {
    pub config: AvdlnConfig,
    pub visual: [Dense; 2],
    pub audio: [Dense; 2],
}

impl AvdlnModel {
    pub fn new(config: AvdlnConfig) -> Result<(Self, ParamStore)> {
        if !(config.margin > 0.0) {
            return Err(Error::Config(format!("margin {} must be positive", config.margin)));
        }
        if config.hidden == 0 || config.embed == 0 {
            return Err(Error::Config("embedding widths must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(config.seed);
        let (h, e) = (config.hidden, config.embed);
        let dense = |store: &mut ParamStore, rng: &mut _, name: &str, i, o, act| Dense::new(store, rng, name, i, o, true, act);
        let visual = [
            dense(&mut store, &mut rng, "visual.fc1", config.visual_dim, h, Activation::Relu),
            dense(&mut store, &mut rng, "visual.fc2", h, e, Activation::Identity),
        ];
        let audio = [
            dense(&mut store, &mut rng, "audio.fc1", config.audio_dim, h, Activation::Relu),
            dense(&mut store, &mut rng, "audio.fc2", h, e, Activation::Identity),
        ];
        Ok((Self { config, visual, audio }, store))
    }

    /// `R^v` for `[d_v]` or a `[n × d_v]` batch.
    pub fn embed_visual(&self, s: &mut Session, v: Var) -> Result<Var> {
        let x = self.visual[0].forward(s, v)?;
        self.visual[1].forward(s, x)
    }

    pub fn embed_audio(&self, s: &mut Session, a: Var) -> Result<Var> {
        let x = self.audio[0].forward(s, a)?;
        self.audio[1].forward(s, x)
    }

    fn embed_rows(&self, store: &ParamStore, rows: &[Vec<f64>], visual: bool) -> Result<Vec<Vec<f64>>> {
        let mut s = Session::inference(store);
        let x = s.input(Tensor::from_rows(rows)?);
        let e = if visual { self.embed_visual(&mut s, x)? } else { self.embed_audio(&mut s, x)? };
        Ok(s.data(e).chunks(self.config.embed).map(<[f64]>::to_vec).collect())
    }
}

pub const AVDLN_KIND: &str = "avdln";

pub fn save_avdln(path: &Path, model: &AvdlnModel, store: &ParamStore) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut out, AVDLN_KIND, &model.config, store)?;
    out.flush()?;
    Ok(())
}

pub fn load_avdln(path: &Path) -> Result<(AvdlnModel, ParamStore)> {
    let mut f = BufReader::new(fs::File::open(path)?);
    let (config, tensors): (AvdlnConfig, _) = read_checkpoint(&mut f, AVDLN_KIND)?;
    let (model, mut store) = AvdlnModel::new(config)?;
    restore(&mut store, tensors)?;
    Ok((model, store))
}

/// `‖R_v − R_a‖₂` on the tape.
pub fn distance(s: &mut Session, r_v: Var, r_a: Var) -> Result<Var> {
    if s.shape(r_v) != s.shape(r_a) {
        return dim_err(format!("embeddings {:?} and {:?} differ", s.shape(r_v), s.shape(r_a)));
    }
    let d = s.sub(r_v, r_a)?;
    let sq = s.square(d);
    let ss = s.sum(sq);
    Ok(s.sqrt(ss))
}

/// Distance between a visual and an audio segment through the model.
pub fn pair_distance(model: &AvdlnModel, store: &ParamStore, visual: &[f64], audio: &[f64]) -> Result<f64> {
    let mut s = Session::inference(store);
    let v = s.input(Tensor::vector(visual.to_vec())?);
    let a = s.input(Tensor::vector(audio.to_vec())?);
    let rv = model.embed_visual(&mut s, v)?;
    let ra = model.embed_audio(&mut s, a)?;
    let d = distance(&mut s, rv, ra)?;
    Ok(s.data(d)[0])
}

/// `y D² + (1 − y) max(0, th − D)²`.
pub fn contrastive_loss_value(d: f64, synchronized: bool, margin: f64) -> f64 {
    if synchronized {
        d * d
    } else {
        let gap = (margin - d).max(0.0);
        gap * gap
    }
}

/// Tape version of [`contrastive_loss_value`] for a scalar distance.
pub fn contrastive_loss(s: &mut Session, d: Var, synchronized: bool, margin: f64) -> Var {
    if synchronized {
        s.square(d)
    } else {
        let neg = s.scale(d, -1.0);
        let gap = s.add_scalar(neg, margin);
        let gap = s.relu(gap);
        s.square(gap)
    }
}

fn batch_loss(model: &AvdlnModel, s: &mut Session, pairs: &PairBatch, idx: &[usize]) -> Result<Var> {
    let vis: Vec<Vec<f64>> = idx.iter().map(|&i| pairs.pairs[i].visual.clone()).collect();
    let aud: Vec<Vec<f64>> = idx.iter().map(|&i| pairs.pairs[i].audio.clone()).collect();
    let y: Vec<f64> = idx.iter().map(|&i| if pairs.pairs[i].synchronized { 1.0 } else { 0.0 }).collect();
    let v = s.input(Tensor::from_rows(&vis)?);
    let a = s.input(Tensor::from_rows(&aud)?);
    let rv = model.embed_visual(s, v)?;
    let ra = model.embed_audio(s, a)?;
    let diff = s.sub(rv, ra)?;
    let sq = s.square(diff);
    let d2 = s.sum_axis(sq, 1)?;
    let d = s.sqrt(d2);
    let neg = s.scale(d, -1.0);
    let gap = s.add_scalar(neg, model.config.margin);
    let gap = s.relu(gap);
    let gap2 = s.square(gap);
    let yv = s.input(Tensor::vector(y.clone())?);
    let ny = s.input(Tensor::vector(y.iter().map(|v| 1.0 - v).collect())?);
    let pos = s.mul(yv, d2)?;
    let negl = s.mul(ny, gap2)?;
    let total = s.add(pos, negl)?;
    Ok(s.mean(total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PairTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub mean_positive: f64,
    pub mean_negative: f64,
}

/// Mean model distance over positive and over negative pairs.
pub fn mean_distances(model: &AvdlnModel, store: &ParamStore, pairs: &PairBatch) -> Result<(f64, f64)> {
    let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0usize, 0usize);
    for chunk in pairs.pairs.chunks(512) {
        let vis: Vec<Vec<f64>> = chunk.iter().map(|p| p.visual.clone()).collect();
        let aud: Vec<Vec<f64>> = chunk.iter().map(|p| p.audio.clone()).collect();
        let rv = model.embed_rows(store, &vis, true)?;
        let ra = model.embed_rows(store, &aud, false)?;
        for ((p, v), a) in chunk.iter().zip(&rv).zip(&ra) {
            let d = euclid(v, a);
            if p.synchronized {
                pos += d;
                np += 1;
            } else {
                neg += d;
                nn += 1;
            }
        }
    }
    Ok((pos / np.max(1) as f64, neg / nn.max(1) as f64))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Adam on the contrastive loss over shuffled mini-batches of pairs.
pub fn train_pairs(
    model: &AvdlnModel,
    store: &mut ParamStore,
    pairs: &PairBatch,
    config: &PairTrainConfig,
) -> Result<Vec<PairEpoch>> {
    if pairs.is_empty() {
        return contract_err("no training pairs");
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(config.adam, store);
    let mut rng = seeded_rng(config.seed.wrapping_add(0xa7d1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut s = Session::new(store);
            let loss = batch_loss(model, &mut s, pairs, batch)?;
            let value = s.data(loss)[0];
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    message: format!("contrastive loss {value}"),
                });
            }
            total += value * batch.len() as f64;
            let grads = s.backward(loss)?;
            store.zero_grads();
            store.accumulate(&grads)?;
            adam.step(store, config.adam.lr)?;
        }
        let (mean_positive, mean_negative) = mean_distances(model, store, pairs)?;
        log::info!("avdln epoch {epoch}: loss {:.4}, D+ {mean_positive:.3}, D- {mean_negative:.3}", total / pairs.len() as f64);
        history.push(PairEpoch {
            epoch,
            loss: total / pairs.len() as f64,
            mean_positive,
            mean_negative,
        });
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Audio query, visual target.
    A2V,
    /// Visual query, audio target.
    V2A,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::A2V => "a2v",
            Direction::V2A => "v2a",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2v" => Ok(Direction::A2V),
            "v2a" => Ok(Direction::V2A),
            _ => Err(Error::Config(format!("unknown direction {s:?}; valid: a2v, v2a"))),
        }
    }
}

/// `cost[s][t]` is the distance between query segment `s` and target segment
/// `t`. Returns the window start minimizing `Σ_s cost[s][start + s]` and
/// that sum; ties go to the earliest start.
pub fn sliding_window_argmin(cost: &[Vec<f64>]) -> Result<(usize, f64)> {
    let l = cost.len();
    let t = cost.first().map_or(0, Vec::len);
    if l == 0 || cost.iter().any(|r| r.len() != t) {
        return dim_err("cost matrix must be non-empty and rectangular");
    }
    if l > t {
        return contract_err(format!("query length {l} exceeds target length {t}"));
    }
    let mut best = (0, f64::INFINITY);
    for start in 0..=t - l {
        let c: f64 = (0..l).map(|s| cost[s][start + s]).sum();
        if c < best.1 {
            best = (start, c);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localization {
    pub t_star: usize,
    pub cumulative_distance: f64,
}

/// Locates `query` (segments of the query modality) inside `target` (the
/// other modality) for the given direction.
pub fn localize(
    model: &AvdlnModel,
    store: &ParamStore,
    query: &[Vec<f64>],
    target: &[Vec<f64>],
    direction: Direction,
) -> Result<Localization> {
    if query.is_empty() {
        return contract_err("empty query");
    }
    if query.len() > target.len() {
        return contract_err(format!("query length {} exceeds target length {}", query.len(), target.len()));
    }
    let (rq, rt) = match direction {
        Direction::A2V => (model.embed_rows(store, query, false)?, model.embed_rows(store, target, true)?),
        Direction::V2A => (model.embed_rows(store, query, true)?, model.embed_rows(store, target, false)?),
    };
    let cost: Vec<Vec<f64>> = rq.iter().map(|q| rt.iter().map(|t| euclid(t, q)).collect()).collect();
    let (t_star, cumulative_distance) = sliding_window_argmin(&cost)?;
    Ok(Localization {
        t_star,
        cumulative_distance,
    })
}

/// One evaluation query cut from a video.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossQuery {
    pub video_id: String,
    pub direction: Direction,
    pub query: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    pub ground_truth: usize,
}

/// Queries from the event segments of every listed video whose event is
/// shorter than the video. The query length is the event length, or
/// `length` when given (videos where it does not fit are skipped).
pub fn cross_queries(
    corpus: &[FeatureSequence],
    indices: &[usize],
    direction: Direction,
    length: Option<usize>,
) -> Vec<CrossQuery> {
    let mut out = Vec::new();
    for &i in indices {
        let seq = &corpus[i];
        let Some((start, end)) = seq.event_interval() else { continue };
        let event_len = end - start + 1;
        if event_len >= seq.len() {
            continue;
        }
        let l = length.unwrap_or(event_len);
        if l == 0 || start + l > seq.len() {
            continue;
        }
        let visual: Vec<Vec<f64>> = (0..seq.len()).map(|t| seq.pooled_visual(t)).collect();
        let audio: Vec<Vec<f64>> = seq.audio.iter().map(|a| a.data().to_vec()).collect();
        let (q, target) = match direction {
            Direction::A2V => (&audio, visual.clone()),
            Direction::V2A => (&visual, audio.clone()),
        };
        out.push(CrossQuery {
            video_id: seq.video_id.clone(),
            direction,
            query: q[start..start + l].to_vec(),
            target,
            ground_truth: start,
        });
    }
    out
}

/// One JSON line of localization output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub video_id: String,
    pub direction: Direction,
    pub l: usize,
    pub t_star: usize,
    pub cumulative_distance: f64,
    pub ground_truth: usize,
    pub hit: bool,
}

/// Localizes every query (in parallel, results in input order) and returns
/// the exact-match fraction with the per-query rows.
pub fn matching_accuracy(
    model: &AvdlnModel,
    store: &ParamStore,
    queries: &[CrossQuery],
) -> Result<(f64, Vec<LocalizationResult>)> {
    if queries.is_empty() {
        return contract_err("no cross-modality queries");
    }
    let rows = queries
        .par_iter()
        .map(|q| {
            let loc = localize(model, store, &q.query, &q.target, q.direction)?;
            Ok(LocalizationResult {
                video_id: q.video_id.clone(),
                direction: q.direction,
                l: q.query.len(),
                t_star: loc.t_star,
                cumulative_distance: loc.cumulative_distance,
                ground_truth: q.ground_truth,
                hit: loc.t_star == q.ground_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = rows.iter().filter(|r| r.hit).count();
    Ok((hits as f64 / rows.len() as f64, rows))
}

pub fn write_results<W: Write>(out: &mut W, rows: &[LocalizationResult]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Expected exact-match rate of a uniformly random window start.
pub fn chance_accuracy(queries: &[CrossQuery]) -> f64 {
    let n = queries.len().max(1) as f64;
    queries
        .iter()
        .map(|q| 1.0 / (q.target.len() - q.query.len() + 1) as f64)
        .sum::<f64>()
        / n
}
