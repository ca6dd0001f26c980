//! Artifact validation by decode and re-encode.

use std::fs;
use std::path::Path;

use avel_core::crossmod::{load_avdln, LocalizationResult, AVDLN_KIND};
use avel_core::data::{
    read_corpus, read_features, read_manifest, write_features, DatasetSplit, SynthSpec, AVEF_MAGIC, MANIFEST_FILE,
};
use avel_core::localizer::{checkpoint_kind, load_checkpoint, write_checkpoint, TrainReport, CHECKPOINT_MAGIC};
use avel_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::AvdlnReport;

fn bad<T>(offset: u64, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        message: message.into(),
    })
}

/// Runs every path and reports each; `ok` is false if any failed.
pub fn run(paths: &[std::path::PathBuf]) -> Result<Value> {
    let mut rows = Vec::new();
    let mut all_ok = true;
    for p in paths {
        match check(p) {
            Ok((kind, detail)) => rows.push(json!({"path": p, "kind": kind, "ok": true, "detail": detail})),
            Err(e) => {
                all_ok = false;
                rows.push(json!({"path": p, "ok": false, "error": e.to_string()}));
            }
        }
    }
    Ok(json!({"command": "validate", "ok": all_ok, "artifacts": rows}))
}

fn ext(path: &Path) -> &str {
    path.extension().and_then(|e| e.to_str()).unwrap_or("")
}

pub fn check(path: &Path) -> Result<(&'static str, Value)> {
    if path.is_dir() {
        return corpus(path);
    }
    if path.file_name().and_then(|n| n.to_str()) == Some(MANIFEST_FILE) {
        return corpus(path.parent().unwrap_or(Path::new(".")));
    }
    let bytes = fs::read(path)?;
    if bytes.starts_with(AVEF_MAGIC) || ext(path) == "avef" {
        return features(&bytes).map(|d| ("avef", d));
    }
    if bytes.starts_with(CHECKPOINT_MAGIC) || ext(path) == "ckpt" {
        return checkpoint(path, &bytes).map(|d| ("checkpoint", d));
    }
    let text = std::str::from_utf8(&bytes).or_else(|e| bad(e.valid_up_to() as u64, "not UTF-8 text"));
    match ext(path) {
        "json" => json_document(text?),
        "jsonl" => json_lines(text?),
        "csv" => csv(text?),
        "pgm" => pgm(&bytes).map(|d| ("pgm", d)),
        other => bad(0, format!("unrecognized artifact (extension {other:?})")),
    }
}

fn corpus(dir: &Path) -> Result<(&'static str, Value)> {
    let entries = read_manifest(dir)?;
    let sequences = read_corpus(dir)?;
    for e in &entries {
        let bytes = fs::read(dir.join(&e.file))?;
        features(&bytes).map_err(|err| Error::Contract(format!("{}: {err}", e.file)))?;
    }
    let segments: usize = sequences.iter().map(|s| s.len()).sum();
    Ok(("corpus", json!({"videos": sequences.len(), "segments": segments})))
}

fn features(bytes: &[u8]) -> Result<Value> {
    let seq = read_features(&mut &bytes[..])?;
    let mut again = Vec::with_capacity(bytes.len());
    write_features(&seq, &mut again)?;
    if again != bytes {
        let at = again.iter().zip(bytes).position(|(a, b)| a != b).unwrap_or(again.len().min(bytes.len()));
        return bad(at as u64, "re-encoding differs from the file");
    }
    Ok(json!({
        "video_id": seq.video_id,
        "segments": seq.len(),
        "visual": [seq.visual_channels(), seq.regions()],
        "audio_dim": seq.audio_dim(),
        "audio_map": seq.audio_map_dims().map(|(c, r)| [c, r]),
    }))
}

fn checkpoint(path: &Path, bytes: &[u8]) -> Result<Value> {
    let kind = checkpoint_kind(bytes)?;
    let mut again = Vec::with_capacity(bytes.len());
    let scalars = match kind.as_str() {
        AVDLN_KIND => {
            let (m, store) = load_avdln(path)?;
            write_checkpoint(&mut again, AVDLN_KIND, &m.config, &store)?;
            store.num_scalars()
        }
        _ => {
            let (m, store) = load_checkpoint(path)?;
            write_checkpoint(&mut again, &kind, &m.config, &store)?;
            store.num_scalars()
        }
    };
    if again != bytes {
        return bad(0, "re-encoding differs from the file");
    }
    Ok(json!({"model": kind, "parameters": scalars}))
}

/// Parses `v` as `T` and requires the re-serialization to equal `v`.
fn exact<T: DeserializeOwned + Serialize>(v: &Value) -> Option<T> {
    let t: T = serde_json::from_value(v.clone()).ok()?;
    (serde_json::to_value(&t).ok()? == *v).then_some(t)
}

fn json_document(text: &str) -> Result<(&'static str, Value)> {
    let v: Value = serde_json::from_str(text).or_else(|e| bad(e.column() as u64, format!("line {}: {e}", e.line())))?;
    if let Some(r) = exact::<TrainReport>(&v) {
        return Ok(("train_report", json!({"epochs": r.epochs.len(), "best_epoch": r.best_epoch})));
    }
    if let Some(r) = exact::<AvdlnReport>(&v) {
        return Ok(("avdln_report", json!({"epochs": r.epochs.len(), "pairs": r.pairs})));
    }
    if let Some(s) = exact::<DatasetSplit>(&v) {
        return Ok(("split", json!({"sizes": [s.train.len(), s.val.len(), s.test.len()]})));
    }
    if let Some(s) = exact::<SynthSpec>(&v) {
        s.validate()?;
        return Ok(("synth_spec", json!({"videos": s.n_videos})));
    }
    bad(0, "JSON document is not a known artifact")
}

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    video_id: String,
    predicted: Vec<usize>,
    labels: Vec<usize>,
}

fn json_lines(text: &str) -> Result<(&'static str, Value)> {
    let (mut results, mut predictions) = (0usize, 0usize);
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end();
        if !body.is_empty() {
            let v: Value = serde_json::from_str(body).or_else(|e| bad(offset, e.to_string()))?;
            if let Some(r) = exact::<LocalizationResult>(&v) {
                if r.hit != (r.t_star == r.ground_truth) || r.l == 0 {
                    return bad(offset, "inconsistent localization row");
                }
                results += 1;
            } else if let Some(p) = exact::<PredictionRow>(&v) {
                if p.predicted.len() != p.labels.len() {
                    return bad(offset, "prediction and label counts differ");
                }
                predictions += 1;
            } else {
                return bad(offset, "line is not a localization result or prediction row");
            }
        }
        offset += line.len() as u64;
    }
    match (results, predictions) {
        (n, 0) if n > 0 => Ok(("localization_results", json!({"rows": n}))),
        (0, n) if n > 0 => Ok(("predictions", json!({"rows": n}))),
        (0, 0) => bad(0, "no rows"),
        _ => bad(0, "mixed row kinds"),
    }
}

fn csv(text: &str) -> Result<(&'static str, Value)> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first == "epoch,train_loss,train_accuracy,val_loss,val_accuracy" {
        let mut n = 0;
        let mut offset = first.len() as u64 + 1;
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            let numeric = cols.len() == 5
                && cols[0].parse::<usize>().is_ok()
                && cols[1..].iter().all(|c| c.is_empty() || c.parse::<f64>().is_ok());
            if !numeric {
                return bad(offset, "malformed report row");
            }
            n += 1;
            offset += line.len() as u64 + 1;
        }
        return Ok(("train_report_csv", json!({"epochs": n})));
    }
    // Attention rows: k weights per segment, each row on the simplex up to
    // the printed precision.
    let mut offset = 0u64;
    let mut k = None;
    let mut rows = 0;
    for line in text.lines() {
        let w: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .or_else(|_| bad(offset, "non-numeric attention weight"))?;
        if *k.get_or_insert(w.len()) != w.len() {
            return bad(offset, "ragged attention rows");
        }
        let tol = 1e-9 * w.len() as f64;
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > tol {
            return bad(offset, "attention row is not on the simplex");
        }
        rows += 1;
        offset += line.len() as u64 + 1;
    }
    if rows == 0 {
        return bad(0, "empty CSV");
    }
    Ok(("attention_csv", json!({"segments": rows, "regions": k})))
}

fn pgm(bytes: &[u8]) -> Result<Value> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return bad(pos as u64, "truncated PGM header");
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return bad(0, "expected an 8-bit P5 image");
    }
    let dims: Vec<usize> = fields[1..3]
        .iter()
        .map(|f| f.parse())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| bad(3, "bad PGM dimensions"))?;
    if bytes.len() != pos + dims[0] * dims[1] {
        return bad(pos as u64, format!("expected {} pixels", dims[0] * dims[1]));
    }
    Ok(json!({"width": dims[0], "height": dims[1]}))
}
