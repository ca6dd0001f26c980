//! Corpus directories: one AVEF file per video plus a JSON-lines manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{read_features, write_features};
use super::FeatureSequence;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line. `event` is the inclusive `[start, end]` segment
/// interval of the annotated event, absent when a video is all background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: usize,
    pub event: Option<[usize; 2]>,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_map: Option<[usize; 2]>,
    /// Extractor provenance, present for files produced from real media.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export: Option<ExportRecord>,
}

/// How an exported file's features were extracted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    /// Frames sampled per 1 s segment for the visual map.
    pub frames_per_segment: usize,
    /// Position of the sampled frames within each second: "center" or "start".
    pub frame_alignment: String,
    pub visual_extractor: String,
    pub visual_version: String,
    pub audio_extractor: String,
    pub audio_version: String,
    pub audio_spatial: bool,
    #[serde(default)]
    pub c3d: bool,
    /// Set when a video could not be decoded and was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ManifestEntry {
    pub fn for_sequence(seq: &FeatureSequence, file: String) -> Self {
        ManifestEntry {
            id: seq.video_id.clone(),
            class: seq.video_label,
            event: seq.event_interval().map(|(s, e)| [s, e]),
            file,
            audio_map: seq.audio_map_dims().map(|(c, r)| [c, r]),
            export: None,
        }
    }

    /// Checks this line against the sequence decoded from its file.
    pub fn check(&self, seq: &FeatureSequence) -> Result<()> {
        let derived = ManifestEntry::for_sequence(seq, self.file.clone());
        if derived.id != self.id
            || derived.class != self.class
            || derived.event != self.event
            || derived.audio_map != self.audio_map
        {
            return Err(Error::Contract(format!(
                "{}: manifest line disagrees with file contents",
                self.file
            )));
        }
        if let Some(x) = &self.export {
            if x.audio_spatial != self.audio_map.is_some() {
                return Err(Error::Contract(format!(
                    "{}: audio spatial flag disagrees with the file's audio map block",
                    self.file
                )));
            }
            if x.frames_per_segment == 0 || !matches!(x.frame_alignment.as_str(), "center" | "start") {
                return Err(Error::Contract(format!("{}: bad frame sampling record", self.file)));
            }
        }
        Ok(())
    }
}

fn file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.avef")
}

/// Writes every sequence as `<id>.avef` under `dir` and the manifest beside
/// them. Creates `dir` if needed.
pub fn write_corpus(dir: &Path, corpus: &[FeatureSequence]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for seq in corpus {
        let name = file_name(&seq.video_id);
        if entries.iter().any(|e: &ManifestEntry| e.file == name) {
            return Err(Error::Contract(format!("duplicate video id {}", seq.video_id)));
        }
        let mut out = BufWriter::new(fs::File::create(dir.join(&name))?);
        write_features(seq, &mut out)?;
        out.flush()?;
        entries.push(ManifestEntry::for_sequence(seq, name));
    }
    let mut m = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    for e in &entries {
        serde_json::to_writer(&mut m, e)?;
        m.write_all(b"\n")?;
    }
    m.flush()?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(dir.join(MANIFEST_FILE))?;
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(f).lines() {
        let line = line?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| Error::Format {
                offset,
                message: format!("{MANIFEST_FILE}: {err}"),
            })?;
            entries.push(e);
        }
        offset += len;
    }
    Ok(entries)
}

/// Loads all sequences listed in the manifest, in manifest order, and checks
/// each one against its manifest line.
pub fn read_corpus(dir: &Path) -> Result<Vec<FeatureSequence>> {
    let entries = read_manifest(dir)?;
    let mut corpus = Vec::with_capacity(entries.len());
    for e in entries {
        let mut f = BufReader::new(fs::File::open(dir.join(&e.file))?);
        let seq = read_features(&mut f)?;
        e.check(&seq)?;
        corpus.push(seq);
    }
    Ok(corpus)
}
