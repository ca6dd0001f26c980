//! Synthetic corpora with planted audio-visual events.
//!
//! Each event class `c` owns a unit-norm audio direction, a unit-norm visual
//! channel direction and a set of visual region cells. Inside a video's event
//! interval the audio vector is `Δ·ι_a·μ_a(c) + ε` and each of the class's
//! region cells is `Δ·ι_v·μ_v(c) + ε`, with `ε ~ N(0, I)`; every other value
//! is pure noise. `Δ` is the signal-to-noise separation and `ι_a, ι_v` scale
//! how informative each modality is.
//!
//! With a nonzero `sync_signal`, every segment also draws a latent
//! `z_t ~ N(0, I_m)` that enters both modalities: `σ·P_a z_t` is added to the
//! audio vector and `σ·P_v z_t` to every visual region, for fixed random
//! projections with unit-norm columns. This gives synchronized audio and
//! visual segments shared content beyond their class.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{contract_err, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

/// Optional spatial audio maps planted alongside the audio vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioMapSpec {
    pub channels: usize,
    pub regions: usize,
    /// Region cells per class that carry the class signal.
    pub event_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_videos: usize,
    /// Event classes, excluding background (`C - 1`).
    pub n_event_classes: usize,
    pub segments: usize,
    pub visual_channels: usize,
    pub regions: usize,
    pub audio_dim: usize,
    /// Visual region cells per class that carry the class signal.
    pub event_region_cells: usize,
    /// Separation `Δ` between class means and background, in noise units.
    pub signal_to_noise: f64,
    pub audio_informativeness: f64,
    pub visual_informativeness: f64,
    /// Inclusive event length range; `None` picks a range whose expected
    /// length balances segment-level class frequencies.
    pub event_len: Option<(usize, usize)>,
    pub audio_map: Option<AudioMapSpec>,
    /// Gain `σ` of the per-segment latent shared by both modalities.
    #[serde(default)]
    pub sync_signal: f64,
    /// Dimension `m` of that latent.
    #[serde(default = "default_sync_dim")]
    pub sync_dim: usize,
    pub seed: u64,
}

fn default_sync_dim() -> usize {
    8
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 250,
            n_event_classes: 5,
            segments: 10,
            visual_channels: 64,
            regions: 49,
            audio_dim: 128,
            event_region_cells: 4,
            signal_to_noise: 3.0,
            audio_informativeness: 1.0,
            visual_informativeness: 1.0,
            event_len: None,
            audio_map: None,
            sync_signal: 0.0,
            sync_dim: default_sync_dim(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.n_event_classes + 1
    }

    /// Event length range actually used.
    ///
    /// The default range `[lo, T]` has mean close to `T·(C-1)/C`, so that
    /// background and each event class cover about `1/C` of all segments.
    pub fn event_len_range(&self) -> (usize, usize) {
        if let Some(r) = self.event_len {
            return r;
        }
        let t = self.segments as f64;
        let c = self.num_classes() as f64;
        let lo = (t * (c - 2.0) / c).round() as usize;
        (lo.clamp(2, self.segments), self.segments)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0
            || self.n_event_classes == 0
            || self.segments == 0
            || self.visual_channels == 0
            || self.regions == 0
            || self.audio_dim == 0
        {
            return contract_err("synthetic spec dimensions must be positive");
        }
        if self.event_region_cells == 0 || self.event_region_cells > self.regions {
            return contract_err(format!(
                "event region cells {} must be in 1..={}",
                self.event_region_cells, self.regions
            ));
        }
        let (lo, hi) = self.event_len_range();
        if lo < 2 || lo > hi || hi > self.segments {
            return contract_err(format!(
                "event length range {lo}..={hi} invalid for T = {} (events last at least 2 segments)",
                self.segments
            ));
        }
        for (v, what) in [
            (self.audio_informativeness, "audio informativeness"),
            (self.visual_informativeness, "visual informativeness"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return contract_err(format!("{what} {v} outside [0, 1]"));
            }
        }
        if !(self.signal_to_noise >= 0.0 && self.signal_to_noise.is_finite()) {
            return contract_err("signal to noise must be finite and non-negative");
        }
        if !(self.sync_signal >= 0.0 && self.sync_signal.is_finite()) || self.sync_dim == 0 {
            return contract_err("sync signal must be finite and non-negative with a positive latent dim");
        }
        if let Some(m) = &self.audio_map {
            if m.channels == 0 || m.regions == 0 || m.event_cells == 0 || m.event_cells > m.regions {
                return contract_err("audio map cells exceed its regions");
            }
        }
        Ok(())
    }
}

struct ClassPattern {
    audio_dir: Vec<f64>,
    visual_dir: Vec<f64>,
    visual_cells: Vec<usize>,
    map_dir: Vec<f64>,
    map_cells: Vec<usize>,
}

fn unit_direction(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn pick_cells(rng: &mut impl Rng, k: usize, n: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..k).collect();
    all.shuffle(rng);
    let mut cells = all[..n].to_vec();
    cells.sort_unstable();
    cells
}

fn noisy(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Values are kept at `f32` precision so corpora round-trip through AVEF
/// losslessly.
fn to_f32_precision(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<FeatureSequence>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let map_spec = spec.audio_map;
    let patterns: Vec<ClassPattern> = (0..spec.n_event_classes)
        .map(|_| {
            let (map_dir, map_cells) = match &map_spec {
                Some(m) => (
                    unit_direction(&mut rng, m.channels),
                    pick_cells(&mut rng, m.regions, m.event_cells),
                ),
                None => (Vec::new(), Vec::new()),
            };
            ClassPattern {
                audio_dir: unit_direction(&mut rng, spec.audio_dim),
                visual_dir: unit_direction(&mut rng, spec.visual_channels),
                visual_cells: pick_cells(&mut rng, spec.regions, spec.event_region_cells),
                map_dir,
                map_cells,
            }
        })
        .collect();

    // Columns of the sync projections: P[j] is the direction of latent j.
    let sync = spec.sync_signal > 0.0;
    let (sync_a, sync_v): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if sync {
        (
            (0..spec.sync_dim).map(|_| unit_direction(&mut rng, spec.audio_dim)).collect(),
            (0..spec.sync_dim).map(|_| unit_direction(&mut rng, spec.visual_channels)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    let (len_lo, len_hi) = spec.event_len_range();
    let t_total = spec.segments;
    let (d_v, k, d_a) = (spec.visual_channels, spec.regions, spec.audio_dim);
    let background = spec.n_event_classes;
    let audio_gain = spec.signal_to_noise * spec.audio_informativeness;
    let visual_gain = spec.signal_to_noise * spec.visual_informativeness;
    let digits = spec.n_videos.to_string().len().max(4);

    let mut corpus = Vec::with_capacity(spec.n_videos);
    for vid in 0..spec.n_videos {
        let class = rng.gen_range(0..spec.n_event_classes);
        let len = rng.gen_range(len_lo..=len_hi);
        let start = rng.gen_range(0..=t_total - len);
        let pat = &patterns[class];

        let mut visual = Vec::with_capacity(t_total);
        let mut audio = Vec::with_capacity(t_total);
        let mut maps = map_spec.map(|_| Vec::with_capacity(t_total));
        let mut labels = Vec::with_capacity(t_total);
        for t in 0..t_total {
            let in_event = (start..start + len).contains(&t);
            labels.push(if in_event { class } else { background });

            let mut v = noisy(&mut rng, d_v * k);
            let mut a = noisy(&mut rng, d_a);
            if in_event {
                for (ch, dir) in pat.visual_dir.iter().enumerate() {
                    for &cell in &pat.visual_cells {
                        v[ch * k + cell] += visual_gain * dir;
                    }
                }
                a.iter_mut()
                    .zip(&pat.audio_dir)
                    .for_each(|(x, d)| *x += audio_gain * d);
            }
            if sync {
                let z = noisy(&mut rng, spec.sync_dim);
                for (zj, (pa, pv)) in z.iter().zip(sync_a.iter().zip(&sync_v)) {
                    let g = spec.sync_signal * zj;
                    a.iter_mut().zip(pa).for_each(|(x, d)| *x += g * d);
                    for (ch, d) in pv.iter().enumerate() {
                        v[ch * k..(ch + 1) * k].iter_mut().for_each(|x| *x += g * d);
                    }
                }
            }
            to_f32_precision(&mut v);
            to_f32_precision(&mut a);
            visual.push(Tensor::matrix(d_v, k, v)?);
            audio.push(Tensor::vector(a)?);

            if let (Some(maps), Some(m)) = (maps.as_mut(), map_spec.as_ref()) {
                let mut am = noisy(&mut rng, m.channels * m.regions);
                if in_event {
                    for (ch, dir) in pat.map_dir.iter().enumerate() {
                        for &cell in &pat.map_cells {
                            am[ch * m.regions + cell] += audio_gain * dir;
                        }
                    }
                }
                to_f32_precision(&mut am);
                maps.push(Tensor::matrix(m.channels, m.regions, am)?);
            }
        }
        corpus.push(FeatureSequence {
            video_id: format!("synth_{vid:0digits$}"),
            num_classes: spec.num_classes(),
            visual,
            audio,
            segment_labels: labels,
            video_label: class,
            audio_maps: maps,
        });
    }
    Ok(corpus)
}

/// Indices of videos whose event is strictly shorter than the whole video.
pub fn short_event_videos(corpus: &[FeatureSequence]) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, s)| match s.event_interval() {
            Some((a, b)) => b - a + 1 < s.len(),
            None => false,
        })
        .map(|(i, _)| i)
        .collect()
}

/// The region cells that carry class `class`'s visual signal under `spec`.
///
/// Replays the generator's class-pattern draws, so it only depends on the
/// seed and dimensions.
pub fn planted_visual_cells(spec: &SynthSpec, class: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut cells = Vec::new();
    for c in 0..=class.min(spec.n_event_classes - 1) {
        if let Some(m) = &spec.audio_map {
            unit_direction(&mut rng, m.channels);
            pick_cells(&mut rng, m.regions, m.event_cells);
        }
        unit_direction(&mut rng, spec.audio_dim);
        unit_direction(&mut rng, spec.visual_channels);
        let picked = pick_cells(&mut rng, spec.regions, spec.event_region_cells);
        if c == class {
            cells = picked;
        }
    }
    Ok(cells)
}
