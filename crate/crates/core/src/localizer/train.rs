use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, task_loss, LocalizerModel, Task};
use crate::data::{DatasetSplit, FeatureSequence};
use crate::error::{contract_err, Error, Result};
use crate::nn::{seeded_rng, Adam, AdamConfig, ParamGrads, ParamStore, Session};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub task: Task,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            task: Task::Supervised,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch size and patience must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub task: Task,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epoch,train_loss,train_accuracy,val_loss,val_accuracy")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:.9},{:.9},{},{}",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                opt(r.val_loss),
                opt(r.val_accuracy)
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub segments: usize,
}

/// Segment accuracy and mean task loss over `indices`, videos evaluated in
/// parallel and reduced in index order.
pub fn evaluate(
    model: &LocalizerModel,
    store: &ParamStore,
    corpus: &[FeatureSequence],
    indices: &[usize],
    task: Task,
) -> Result<EvalSummary> {
    if indices.is_empty() {
        return contract_err("evaluation set is empty");
    }
    let per_video = indices
        .par_iter()
        .map(|&i| {
            let seq = &corpus[i];
            let mut s = Session::inference(store);
            let f = model.forward(&mut s, seq)?;
            let loss = task_loss(&mut s, &f.logits, seq, task)?;
            let correct = f
                .logits
                .iter()
                .zip(&seq.segment_labels)
                .filter(|(&m, &y)| argmax(s.data(m)) == y)
                .count();
            Ok((s.data(loss)[0], correct, seq.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut loss, mut correct, mut segments) = (0.0, 0, 0);
    for (l, c, n) in per_video {
        loss += l;
        correct += c;
        segments += n;
    }
    Ok(EvalSummary {
        accuracy: correct as f64 / segments as f64,
        loss: loss / indices.len() as f64,
        correct,
        segments,
    })
}

struct BatchOutcome {
    grads: ParamGrads,
    loss: f64,
    correct: usize,
    segments: usize,
}

fn run_batch(
    model: &LocalizerModel,
    store: &ParamStore,
    corpus: &[FeatureSequence],
    batch: &[usize],
    task: Task,
) -> Result<(BatchOutcome, Vec<(usize, f64)>)> {
    let per_video = batch
        .par_iter()
        .map(|&i| {
            let seq = &corpus[i];
            let mut s = Session::new(store);
            let f = model.forward(&mut s, seq)?;
            let loss = task_loss(&mut s, &f.logits, seq, task)?;
            let correct = f
                .logits
                .iter()
                .zip(&seq.segment_labels)
                .filter(|(&m, &y)| argmax(s.data(m)) == y)
                .count();
            let value = s.data(loss)[0];
            let grads = s.backward(loss)?;
            Ok((i, value, correct, seq.len(), grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = BatchOutcome {
        grads: ParamGrads::default(),
        loss: 0.0,
        correct: 0,
        segments: 0,
    };
    let mut losses = Vec::with_capacity(per_video.len());
    for (i, l, c, n, g) in per_video {
        out.grads.add_assign(&g);
        out.loss += l;
        out.correct += c;
        out.segments += n;
        losses.push((i, l));
    }
    out.grads.scale(1.0 / batch.len() as f64);
    Ok((out, losses))
}

/// Trains `store` in place with Adam on the split's training videos.
///
/// After every epoch the validation set is scored; the parameters of the
/// best validation epoch are restored at the end, and training stops once
/// `patience` epochs pass without improvement. Without a validation set the
/// last epoch is kept.
pub fn train(
    model: &LocalizerModel,
    store: &mut ParamStore,
    corpus: &[FeatureSequence],
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let mut report = TrainReport {
        variant: model.config.variant.name().to_string(),
        task: config.task,
        seed: config.seed,
        epochs: Vec::new(),
        best_epoch: None,
        best_val_accuracy: None,
        stopped_early: false,
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    if split.train.is_empty() {
        return contract_err("training split is empty");
    }
    let mut adam = Adam::new(config.adam, store);
    let mut rng = seeded_rng(config.seed.wrapping_add(0x5eed));
    let mut order = split.train.clone();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct, mut segments) = (0.0, 0, 0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (out, losses) = run_batch(model, store, corpus, batch, config.task)?;
            if let Some((i, l)) = losses.iter().find(|(_, l)| !l.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    message: format!("loss {l} on video {}", corpus[*i].video_id),
                });
            }
            loss += out.loss;
            correct += out.correct;
            segments += out.segments;
            store.zero_grads();
            store.accumulate(&out.grads)?;
            adam.step(store, config.adam.lr)?;
        }
        let val = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(model, store, corpus, &split.val, config.task)?)
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss / order.len() as f64,
            train_accuracy: correct as f64 / segments as f64,
            val_loss: val.map(|v| v.loss),
            val_accuracy: val.map(|v| v.accuracy),
        });
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val acc {:?}",
            loss / order.len() as f64,
            correct as f64 / segments as f64,
            val.map(|v| v.accuracy)
        );
        match val {
            Some(v) => {
                if best.as_ref().is_none_or(|(acc, _)| v.accuracy > *acc) {
                    best = Some((v.accuracy, store.clone()));
                    report.best_epoch = Some(epoch);
                    report.best_val_accuracy = Some(v.accuracy);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        report.stopped_early = epoch < config.epochs;
                        break;
                    }
                }
            }
            None => report.best_epoch = Some(epoch),
        }
    }
    if let Some((_, params)) = best {
        store.copy_values_from(&params)?;
    }
    store.clear_grads();
    Ok(report)
}
