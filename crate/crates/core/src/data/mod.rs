//! Feature-sequence data model and everything that produces or consumes it.

mod format;
mod manifest;
mod pairs;
mod split;
mod synth;

pub use format::{read_features, write_features, AVEF_MAGIC, AVEF_VERSION};
pub use manifest::{read_corpus, read_manifest, write_corpus, ExportRecord, ManifestEntry, MANIFEST_FILE};
pub use pairs::{make_pairs, Pair, PairBatch, SegmentRef};
pub use split::{split, DatasetSplit};
pub use synth::{
    generate_synthetic, planted_visual_cells, short_event_videos, AudioMapSpec, SynthSpec,
};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// One video's `T` segments of pre-extracted features plus labels.
///
/// Visual maps are `[d_v × k]` (channels × regions, regions innermost). Audio
/// vectors are `[d_a]`. Segment labels are class indices in `0..C`; index
/// `C - 1` is background. The optional audio maps hold spatial audio
/// features `[channels × regions]` used by visual-guided audio attention.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub num_classes: usize,
    pub visual: Vec<Tensor>,
    pub audio: Vec<Tensor>,
    pub segment_labels: Vec<usize>,
    pub video_label: usize,
    pub audio_maps: Option<Vec<Tensor>>,
}

impl FeatureSequence {
    /// Checks dimensions and label ranges.
    pub fn validate(&self) -> Result<()> {
        let t = self.visual.len();
        if t == 0 {
            return dim_err(format!("{}: no segments", self.video_id));
        }
        if self.audio.len() != t || self.segment_labels.len() != t {
            return dim_err(format!(
                "{}: {} visual maps, {} audio vectors, {} labels",
                self.video_id,
                t,
                self.audio.len(),
                self.segment_labels.len()
            ));
        }
        if self.num_classes < 2 {
            return contract_err("need at least one event class plus background");
        }
        let vshape = self.visual[0].shape().to_vec();
        if vshape.len() != 2 || self.visual.iter().any(|v| v.shape() != vshape.as_slice()) {
            return dim_err(format!("{}: inconsistent visual map shapes", self.video_id));
        }
        let ashape = self.audio[0].shape().to_vec();
        if ashape.len() != 1 || self.audio.iter().any(|a| a.shape() != ashape.as_slice()) {
            return dim_err(format!("{}: inconsistent audio shapes", self.video_id));
        }
        if let Some(maps) = &self.audio_maps {
            let mshape = maps.first().map(|m| m.shape().to_vec()).unwrap_or_default();
            if maps.len() != t
                || mshape.len() != 2
                || maps.iter().any(|m| m.shape() != mshape.as_slice())
            {
                return dim_err(format!("{}: inconsistent audio maps", self.video_id));
            }
        }
        if let Some(&bad) = self.segment_labels.iter().find(|&&l| l >= self.num_classes) {
            return contract_err(format!("segment label {bad} >= C = {}", self.num_classes));
        }
        if self.video_label >= self.num_classes {
            return contract_err(format!("video label {} >= C", self.video_label));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.visual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.is_empty()
    }

    pub fn visual_channels(&self) -> usize {
        self.visual[0].shape()[0]
    }

    pub fn regions(&self) -> usize {
        self.visual[0].shape()[1]
    }

    pub fn audio_dim(&self) -> usize {
        self.audio[0].numel()
    }

    /// `(channels, regions)` of the audio spatial maps, if present.
    pub fn audio_map_dims(&self) -> Option<(usize, usize)> {
        self.audio_maps
            .as_ref()
            .and_then(|m| m.first())
            .map(|m| (m.shape()[0], m.shape()[1]))
    }

    pub fn background(&self) -> usize {
        self.num_classes - 1
    }

    pub fn one_hot(&self, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.segment_labels[t]] = 1.0;
        v
    }

    /// First and last non-background segment (inclusive), if any.
    pub fn event_interval(&self) -> Option<(usize, usize)> {
        let bg = self.background();
        let start = self.segment_labels.iter().position(|&l| l != bg)?;
        let end = self.segment_labels.iter().rposition(|&l| l != bg)?;
        Some((start, end))
    }

    /// Global average over regions of the visual map at segment `t`.
    pub fn pooled_visual(&self, t: usize) -> Vec<f64> {
        pool_regions(&self.visual[t])
    }
}

/// Mean over the trailing (region) axis of a `[channels × regions]` map.
pub fn pool_regions(map: &Tensor) -> Vec<f64> {
    let (c, k) = (map.shape()[0], map.shape()[1]);
    map.data()
        .chunks(k)
        .take(c)
        .map(|row| row.iter().sum::<f64>() / k as f64)
        .collect()
}
