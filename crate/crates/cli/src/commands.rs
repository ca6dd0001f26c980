use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use avel_core::crossmod::{
    self, chance_accuracy, cross_queries, load_avdln, matching_accuracy, save_avdln, train_pairs, AvdlnConfig,
    AvdlnModel, Direction, PairEpoch, PairTrainConfig,
};
use avel_core::data::{self, generate_synthetic, make_pairs, read_corpus, write_corpus, AudioMapSpec, DatasetSplit,
    FeatureSequence, SynthSpec};
use avel_core::fusion::{FusionOp, FusionSpec, MrnBranch, Placement};
use avel_core::localizer::{
    self, evaluate, load_checkpoint, save_checkpoint, FeatureDims, LocalizerModel, ModelConfig, Task, TrainConfig,
    TrainReport, Variant,
};
use avel_core::nn::AdamConfig;
use avel_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::settings::{Numbers, Settings};
use crate::{AttmapsArgs, EvalArgs, LocalizeArgs, SynthArgs, TrainArgs};

pub const SYNTH_FILE: &str = "synth.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SPLIT_FILE: &str = "split.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Training history of a distance model, written as report.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvdlnReport {
    pub seed: u64,
    pub pairs: usize,
    pub positives: usize,
    pub negatives_per_positive: f64,
    pub epochs: Vec<PairEpoch>,
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn parse_name<T: std::str::FromStr<Err = Error>>(raw: Option<String>) -> Result<Option<T>> {
    raw.map(|s| s.parse()).transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_corpus(dir: &Path) -> Result<Vec<FeatureSequence>> {
    let corpus = read_corpus(dir)?;
    if corpus.is_empty() {
        return Err(Error::Contract(format!("{}: corpus is empty", dir.display())));
    }
    Ok(corpus)
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn subset_indices(split: &DatasetSplit, corpus_len: usize, subset: &str) -> Result<Vec<usize>> {
    let v = match subset {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => (0..corpus_len).collect(),
        _ => return Err(Error::Config(format!("unknown subset {subset:?}; valid: train, val, test, all"))),
    };
    if let Some(&i) = v.iter().find(|&&i| i >= corpus_len) {
        return Err(Error::Contract(format!("split index {i} beyond corpus of {corpus_len}")));
    }
    if v.is_empty() {
        return Err(Error::Contract(format!("subset {subset} is empty")));
    }
    Ok(v)
}

pub fn synth(a: &SynthArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let d = SynthSpec::default();
    let out: PathBuf = required(cfg.pick(a.out.clone(), "out")?, "out")?;
    let spec = SynthSpec {
        n_videos: cfg.pick_or(a.videos, "videos", d.n_videos)?,
        n_event_classes: cfg.pick_or(a.classes, "classes", d.n_event_classes)?,
        segments: cfg.pick_or(a.segments, "segments", d.segments)?,
        visual_channels: cfg.pick_or(a.visual_channels, "visual-channels", d.visual_channels)?,
        regions: cfg.pick_or(a.regions, "regions", d.regions)?,
        audio_dim: cfg.pick_or(a.audio_dim, "audio-dim", d.audio_dim)?,
        event_region_cells: cfg.pick_or(a.event_cells, "event-cells", d.event_region_cells)?,
        signal_to_noise: cfg.pick_or(a.snr, "snr", d.signal_to_noise)?,
        audio_informativeness: cfg.pick_or(a.audio_info, "audio-info", d.audio_informativeness)?,
        visual_informativeness: cfg.pick_or(a.visual_info, "visual-info", d.visual_informativeness)?,
        event_len: cfg.pick(a.event_len.clone(), "event-len")?.map(|Numbers([lo, hi])| (lo, hi)),
        audio_map: cfg.pick(a.audio_map.clone(), "audio-map")?.map(|Numbers([channels, regions, event_cells])| {
            AudioMapSpec {
                channels,
                regions,
                event_cells,
            }
        }),
        sync_signal: cfg.pick_or(a.sync, "sync", d.sync_signal)?,
        sync_dim: cfg.pick_or(a.sync_dim, "sync-dim", d.sync_dim)?,
        seed: cfg.pick_or(a.seed, "seed", d.seed)?,
    };
    cfg.finish()?;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let corpus = generate_synthetic(&spec)?;
    write_corpus(&out, &corpus)?;
    write_json(&out.join(SYNTH_FILE), &spec)?;
    let mut per_class = vec![0usize; spec.n_event_classes];
    let mut event_segments = 0;
    for seq in &corpus {
        per_class[seq.video_label] += 1;
        event_segments += seq.segment_labels.iter().filter(|&&l| l != seq.background()).count();
    }
    Ok(json!({
        "command": "synth",
        "out": out,
        "videos": corpus.len(),
        "classes": spec.n_event_classes + 1,
        "segments": spec.segments,
        "visual": [spec.visual_channels, spec.regions],
        "audio_dim": spec.audio_dim,
        "audio_map": spec.audio_map.map(|m| [m.channels, m.regions]),
        "videos_per_class": per_class,
        "event_segment_fraction": event_segments as f64 / (corpus.len() * spec.segments) as f64,
        "seed": spec.seed,
    }))
}

pub fn train(a: &TrainArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let model: String = cfg.pick_or(a.model.clone(), "model", "localizer".to_string())?;
    match model.as_str() {
        "localizer" => train_localizer(a, cfg),
        "avdln" => train_avdln(a, cfg),
        other => Err(Error::Config(format!("unknown model {other:?}; valid: localizer, avdln"))),
    }
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

fn train_localizer(a: &TrainArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let data: PathBuf = required(cfg.pick(a.data.clone(), "data")?, "data")?;
    let out: PathBuf = required(cfg.pick(a.out.clone(), "out")?, "out")?;
    let variant_name: String = cfg.pick_or(a.variant.clone(), "variant", "A+V-att".to_string())?;
    let (variant, implied) = Variant::parse(&variant_name)?;
    let task: Option<Task> = parse_name(cfg.pick(a.task.clone(), "task")?)?;
    let task = match (task, implied) {
        (Some(t), Some(i)) if t != i => {
            return Err(Error::Config(format!("variant {variant_name} implies task {i}, but task {t} was given")))
        }
        (Some(t), _) => t,
        (None, Some(i)) => i,
        (None, None) => Task::Supervised,
    };
    let fd = FusionSpec::default();
    let fusion = FusionSpec {
        operator: parse_name::<FusionOp>(cfg.pick(a.fusion.clone(), "fusion")?)?.unwrap_or(fd.operator),
        placement: parse_name::<Placement>(cfg.pick(a.placement.clone(), "placement")?)?.unwrap_or(fd.placement),
        joint_dim: cfg.pick_or(a.joint_dim, "joint-dim", fd.joint_dim)?,
        blocks: cfg.pick_or(a.blocks, "blocks", fd.blocks)?,
        mrn_branch: parse_name::<MrnBranch>(cfg.pick(a.mrn_branch.clone(), "mrn-branch")?)?.unwrap_or(fd.mrn_branch),
    };
    fusion.validate()?;
    let td = TrainConfig::default();
    let seed = cfg.pick_or(a.seed, "seed", 0)?;
    let tcfg = TrainConfig {
        epochs: cfg.pick_or(a.epochs, "epochs", td.epochs)?,
        batch_size: cfg.pick_or(a.batch_size, "batch-size", td.batch_size)?,
        adam: adam(cfg.pick_or(a.lr, "lr", td.adam.lr)?),
        seed,
        task,
        patience: cfg.pick_or(a.patience, "patience", td.patience)?,
    };
    tcfg.validate()?;
    let Numbers(fractions) = cfg.pick_or(a.split.clone(), "split", Numbers([0.8, 0.1, 0.1]))?;
    let hidden = cfg.pick(a.hidden, "hidden")?;
    let att_dim = cfg.pick(a.att_dim, "att-dim")?;
    let att_hidden = cfg.pick(a.att_hidden, "att-hidden")?;
    cfg.finish()?;

    let corpus = load_corpus(&data)?;
    let sp = data::split(&corpus, fractions, seed).map_err(|e| Error::Config(e.to_string()))?;
    let mut mcfg = ModelConfig::new(variant, FeatureDims::of(&corpus[0]));
    mcfg.fusion = fusion;
    mcfg.seed = seed;
    if let Some(h) = hidden {
        mcfg.hidden = h;
    }
    if let Some(d) = att_dim {
        mcfg.att_dim = d;
    }
    if let Some(d) = att_hidden {
        mcfg.att_hidden = d;
    }
    let (m, mut store) = LocalizerModel::new(mcfg)?;
    let report = localizer::train(&m, &mut store, &corpus, &sp, &tcfg)?;

    fs::create_dir_all(&out)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &m, &store)?;
    write_json(&out.join(SPLIT_FILE), &sp)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let mut csv = BufWriter::new(fs::File::create(out.join(REPORT_CSV))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;

    let test = if sp.test.is_empty() {
        None
    } else {
        Some(evaluate(&m, &store, &corpus, &sp.test, task)?.accuracy)
    };
    let last = report.epochs.last();
    Ok(json!({
        "command": "train",
        "model": "localizer",
        "variant": variant.name(),
        "task": task,
        "fusion": m.config.fusion,
        "parameters": store.num_scalars(),
        "videos": [sp.train.len(), sp.val.len(), sp.test.len()],
        "epochs_run": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
        "stopped_early": report.stopped_early,
        "final_train_loss": last.map(|r| r.train_loss),
        "test_accuracy": test,
        "checkpoint": out.join(CHECKPOINT_FILE),
    }))
}

fn train_avdln(a: &TrainArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let data: PathBuf = required(cfg.pick(a.data.clone(), "data")?, "data")?;
    let out: PathBuf = required(cfg.pick(a.out.clone(), "out")?, "out")?;
    let pd = PairTrainConfig::default();
    let seed = cfg.pick_or(a.seed, "seed", 0)?;
    let pcfg = PairTrainConfig {
        epochs: cfg.pick_or(a.epochs, "epochs", pd.epochs)?,
        batch_size: cfg.pick_or(a.batch_size, "batch-size", pd.batch_size)?,
        adam: adam(cfg.pick_or(a.lr, "lr", pd.adam.lr)?),
        seed,
    };
    let ratio = cfg.pick_or(a.negatives, "negatives", 1.0)?;
    let Numbers(fractions) = cfg.pick_or(a.split.clone(), "split", Numbers([0.8, 0.0, 0.2]))?;
    let hidden = cfg.pick(a.hidden, "hidden")?;
    let embed = cfg.pick(a.embed, "embed")?;
    let margin = cfg.pick(a.margin, "margin")?;
    cfg.finish()?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("negatives {ratio} must be positive")));
    }

    let corpus = load_corpus(&data)?;
    let sp = data::split(&corpus, fractions, seed).map_err(|e| Error::Config(e.to_string()))?;
    let train_videos: Vec<FeatureSequence> = sp.train.iter().map(|&i| corpus[i].clone()).collect();
    let pairs = make_pairs(&train_videos, ratio, seed)?;
    let mut acfg = AvdlnConfig::new(corpus[0].visual_channels(), corpus[0].audio_dim());
    acfg.seed = seed;
    if let Some(h) = hidden {
        acfg.hidden = h;
    }
    if let Some(e) = embed {
        acfg.embed = e;
    }
    if let Some(m) = margin {
        acfg.margin = m;
    }
    let (m, mut store) = AvdlnModel::new(acfg)?;
    let history = train_pairs(&m, &mut store, &pairs, &pcfg)?;

    fs::create_dir_all(&out)?;
    save_avdln(&out.join(CHECKPOINT_FILE), &m, &store)?;
    write_json(&out.join(SPLIT_FILE), &sp)?;
    let report = AvdlnReport {
        seed,
        pairs: pairs.len(),
        positives: pairs.positives(),
        negatives_per_positive: ratio,
        epochs: history,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    let last = report.epochs.last();
    Ok(json!({
        "command": "train",
        "model": "avdln",
        "pairs": pairs.len(),
        "epochs_run": report.epochs.len(),
        "final_loss": last.map(|e| e.loss),
        "mean_positive_distance": last.map(|e| e.mean_positive),
        "mean_negative_distance": last.map(|e| e.mean_negative),
        "checkpoint": out.join(CHECKPOINT_FILE),
    }))
}

pub fn eval(a: &EvalArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let checkpoint: PathBuf = required(cfg.pick(a.checkpoint.clone(), "checkpoint")?, "checkpoint")?;
    let data: PathBuf = required(cfg.pick(a.data.clone(), "data")?, "data")?;
    let split_path = cfg.pick_or(a.split.clone(), "split", sibling(&checkpoint, SPLIT_FILE))?;
    let subset: Option<String> = cfg.pick(a.subset.clone(), "subset")?;
    let task: Option<Task> = parse_name(cfg.pick(a.task.clone(), "task")?)?;
    let predictions: Option<PathBuf> = cfg.pick(a.predictions.clone(), "predictions")?;
    cfg.finish()?;

    let task = match task {
        Some(t) => t,
        None => read_json::<TrainReport>(&sibling(&checkpoint, REPORT_FILE))
            .map(|r| r.task)
            .unwrap_or(Task::Supervised),
    };
    let (m, store) = load_checkpoint(&checkpoint)?;
    let corpus = load_corpus(&data)?;
    let sp: DatasetSplit = read_json(&split_path)?;
    let subset = subset.unwrap_or_else(|| if sp.val.is_empty() { "test" } else { "val" }.to_string());
    let indices = subset_indices(&sp, corpus.len(), &subset)?;
    let summary = evaluate(&m, &store, &corpus, &indices, task)?;
    if let Some(path) = &predictions {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for &i in &indices {
            let seq = &corpus[i];
            let row = json!({
                "video_id": seq.video_id,
                "predicted": m.predict_segments(&store, seq)?,
                "labels": seq.segment_labels,
            });
            writeln!(out, "{row}")?;
        }
        out.flush()?;
    }
    Ok(json!({
        "command": "eval",
        "variant": m.config.variant.name(),
        "task": task,
        "subset": subset,
        "videos": indices.len(),
        "segments": summary.segments,
        "correct": summary.correct,
        "accuracy": summary.accuracy,
        "loss": summary.loss,
    }))
}

pub fn localize(a: &LocalizeArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let checkpoint: PathBuf = required(cfg.pick(a.checkpoint.clone(), "checkpoint")?, "checkpoint")?;
    let data: PathBuf = required(cfg.pick(a.data.clone(), "data")?, "data")?;
    let split_flag: Option<PathBuf> = cfg.pick(a.split.clone(), "split")?;
    let subset: Option<String> = cfg.pick(a.subset.clone(), "subset")?;
    let direction: Direction = parse_name(cfg.pick(a.direction.clone(), "direction")?)?.unwrap_or(Direction::A2V);
    let length: Option<usize> = cfg.pick(a.length, "length")?;
    let out: Option<PathBuf> = cfg.pick(a.out.clone(), "out")?;
    cfg.finish()?;
    if length == Some(0) {
        return Err(Error::Config("query length must be positive".into()));
    }

    let (m, store) = load_avdln(&checkpoint)?;
    let corpus = load_corpus(&data)?;
    let split_path = split_flag.unwrap_or_else(|| sibling(&checkpoint, SPLIT_FILE));
    let indices = if split_path.exists() {
        let sp: DatasetSplit = read_json(&split_path)?;
        subset_indices(&sp, corpus.len(), subset.as_deref().unwrap_or("test"))?
    } else {
        match subset.as_deref() {
            None | Some("all") => (0..corpus.len()).collect(),
            Some(s) => return Err(Error::Config(format!("subset {s} needs a split file"))),
        }
    };
    let queries = cross_queries(&corpus, &indices, direction, length);
    let (accuracy, rows) = matching_accuracy(&m, &store, &queries)?;
    if let Some(path) = &out {
        let mut w = BufWriter::new(fs::File::create(path)?);
        crossmod::write_results(&mut w, &rows)?;
        w.flush()?;
    }
    Ok(json!({
        "command": "localize",
        "direction": direction,
        "queries": rows.len(),
        "accuracy": accuracy,
        "chance": chance_accuracy(&queries),
        "results": out,
    }))
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn attmaps(a: &AttmapsArgs, cfg: &Settings) -> Result<serde_json::Value> {
    let checkpoint: PathBuf = required(cfg.pick(a.checkpoint.clone(), "checkpoint")?, "checkpoint")?;
    let data: PathBuf = required(cfg.pick(a.data.clone(), "data")?, "data")?;
    let videos: Option<String> = cfg.pick(a.videos.clone(), "videos")?;
    let out: PathBuf = required(cfg.pick(a.out.clone(), "out")?, "out")?;
    cfg.finish()?;

    let (m, store) = load_checkpoint(&checkpoint)?;
    let corpus = load_corpus(&data)?;
    let selected: Vec<&FeatureSequence> = match &videos {
        None => corpus.iter().collect(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .map(|id| {
                corpus
                    .iter()
                    .find(|s| s.video_id == id)
                    .ok_or_else(|| Error::Contract(format!("video {id} is not in the corpus")))
            })
            .collect::<Result<_>>()?,
    };
    fs::create_dir_all(&out)?;
    let mut files = Vec::new();
    for seq in selected {
        let maps = m.attention_maps(&store, seq)?;
        for (label, pick) in [("visual", 0), ("audio", 1)] {
            let weights: Vec<_> = maps
                .iter()
                .filter_map(|s| if pick == 0 { s.visual.as_ref() } else { s.audio.as_ref() })
                .collect();
            if weights.is_empty() {
                continue;
            }
            let base = format!("{}.{label}", safe_name(&seq.video_id));
            let csv_path = out.join(format!("{base}.csv"));
            let mut csv = BufWriter::new(fs::File::create(&csv_path)?);
            for w in &weights {
                w.write_csv_row(&mut csv)?;
            }
            csv.flush()?;
            files.push(csv_path);
            for (t, w) in weights.iter().enumerate() {
                let p = out.join(format!("{base}.t{t}.pgm"));
                let mut f = BufWriter::new(fs::File::create(&p)?);
                w.write_pgm(&mut f)?;
                f.flush()?;
                files.push(p);
            }
        }
    }
    if files.is_empty() {
        return Err(Error::Unavailable(format!(
            "variant {} has no attention maps",
            m.config.variant.name()
        )));
    }
    Ok(json!({
        "command": "attmaps",
        "variant": m.config.variant.name(),
        "files": files.len(),
        "out": out,
    }))
}
