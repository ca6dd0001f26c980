//! Event localization: per-segment classification of feature sequences.
//!
//! A model turns every segment into a shared-head logit vector over `C`
//! classes. Audio and visual streams each get their own LSTM unless fusion
//! happens before the temporal model.

mod checkpoint;
mod train;

pub(crate) use checkpoint::restore;
pub use checkpoint::{
    checkpoint_kind, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use train::{evaluate, train, EpochRecord, EvalSummary, TrainConfig, TrainReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionMap, GuidedAttention, DEFAULT_PROJ_DIM, DEFAULT_SCORE_DIM};
use crate::data::{pool_regions, FeatureSequence};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::fusion::{Fusion, FusionSpec, Placement};
use crate::nn::{seeded_rng, Activation, Dense, ParamStore, Session};
use crate::temporal::{run_sequence, LstmCell, DEFAULT_HIDDEN};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Per-segment labels.
    Supervised,
    /// Video-level label only, via averaged segment logits.
    Weak,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Task::Supervised),
            "weak" => Ok(Task::Weak),
            _ => Err(Error::Config(format!("unknown task {s:?}; valid: supervised, weak"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Supervised => "supervised",
            Task::Weak => "weak",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioInput {
    None,
    /// The per-segment audio vector.
    Vector,
    /// Region-averaged audio spatial map.
    Map,
    /// Audio spatial map attended under the pooled visual map.
    AttendedMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualInput {
    None,
    /// Global average over regions.
    Pooled,
    /// Audio-guided attention over regions.
    Attended,
}

/// Which features a model consumes and how they are pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub audio: AudioInput,
    pub visual: VisualInput,
}

const VARIANTS: [(&str, AudioInput, VisualInput); 9] = [
    ("A", AudioInput::Vector, VisualInput::None),
    ("V", AudioInput::None, VisualInput::Pooled),
    ("V-att", AudioInput::None, VisualInput::Attended),
    ("A+V", AudioInput::Vector, VisualInput::Pooled),
    ("A+V-att", AudioInput::Vector, VisualInput::Attended),
    ("A'", AudioInput::Map, VisualInput::None),
    ("A'-att", AudioInput::AttendedMap, VisualInput::None),
    ("A'+V", AudioInput::Map, VisualInput::Pooled),
    ("A'+V-co-att", AudioInput::AttendedMap, VisualInput::Attended),
];

impl Variant {
    pub fn names() -> Vec<&'static str> {
        VARIANTS.iter().map(|v| v.0).collect()
    }

    /// Parses a variant name. A `W-` prefix selects the weak task.
    pub fn parse(name: &str) -> Result<(Variant, Option<Task>)> {
        let (base, task) = match name.strip_prefix("W-") {
            Some(rest) => (rest, Some(Task::Weak)),
            None => (name, None),
        };
        VARIANTS
            .iter()
            .find(|v| v.0 == base)
            .map(|&(_, audio, visual)| (Variant { audio, visual }, task))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model variant {name:?}; valid: {} (optionally prefixed W-)",
                    Variant::names().join(", ")
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        VARIANTS
            .iter()
            .find(|v| v.1 == self.audio && v.2 == self.visual)
            .map(|v| v.0)
            .unwrap_or("custom")
    }

    pub fn bimodal(&self) -> bool {
        self.audio != AudioInput::None && self.visual != VisualInput::None
    }

    fn uses_audio_map(&self) -> bool {
        matches!(self.audio, AudioInput::Map | AudioInput::AttendedMap)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::parse(s).map(|(v, _)| v)
    }
}

/// Feature dimensions a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub visual_channels: usize,
    pub regions: usize,
    pub audio_dim: usize,
    pub num_classes: usize,
    pub audio_map: Option<(usize, usize)>,
}

impl FeatureDims {
    pub fn of(seq: &FeatureSequence) -> Self {
        Self {
            visual_channels: seq.visual_channels(),
            regions: seq.regions(),
            audio_dim: seq.audio_dim(),
            num_classes: seq.num_classes,
            audio_map: seq.audio_map_dims(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub fusion: FusionSpec,
    pub dims: FeatureDims,
    pub hidden: usize,
    pub att_dim: usize,
    pub att_hidden: usize,
    /// Reserved; only unidirectional LSTMs are implemented.
    pub bidirectional: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, dims: FeatureDims) -> Self {
        Self {
            variant,
            fusion: FusionSpec::default(),
            dims,
            hidden: DEFAULT_HIDDEN,
            att_dim: DEFAULT_PROJ_DIM,
            att_hidden: DEFAULT_SCORE_DIM,
            bidirectional: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Head {
    /// One LSTM on the single modality.
    Unimodal { lstm: LstmCell, head: Dense },
    Early { fusion: Fusion, lstm: LstmCell, head: Dense },
    Late { lstm_a: LstmCell, lstm_v: LstmCell, fusion: Fusion, head: Option<Dense> },
    Decision { lstm_a: LstmCell, lstm_v: LstmCell, head_a: Dense, head_v: Dense, fusion: Fusion },
}

#[derive(Clone, Debug)]
pub struct LocalizerModel {
    pub config: ModelConfig,
    visual_att: Option<GuidedAttention>,
    audio_att: Option<GuidedAttention>,
    head: Head,
}

/// Everything recorded by one forward pass.
pub struct Forward {
    pub logits: Vec<Var>,
    pub visual_att: Vec<Var>,
    pub audio_att: Vec<Var>,
}

/// Attention weights of one segment, for the directions the model uses.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentAttention {
    pub visual: Option<AttentionMap>,
    pub audio: Option<AttentionMap>,
}

impl LocalizerModel {
    /// Builds the model and registers its parameters in a fresh store.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store)?;
        Ok((model, store))
    }

    fn build(config: ModelConfig, store: &mut ParamStore) -> Result<Self> {
        if config.bidirectional {
            return Err(Error::Config("bidirectional LSTMs are not supported".into()));
        }
        config.fusion.validate()?;
        let v = config.variant;
        let d = config.dims;
        if v.audio == AudioInput::None && v.visual == VisualInput::None {
            return Err(Error::Config("a model needs at least one modality".into()));
        }
        if d.num_classes < 2 {
            return Err(Error::Config("need at least one event class plus background".into()));
        }
        let map_dims = if v.uses_audio_map() {
            Some(d.audio_map.ok_or_else(|| {
                Error::Unavailable(format!("variant {} needs audio spatial maps", v.name()))
            })?)
        } else {
            None
        };
        let mut rng = seeded_rng(config.seed);
        let rng = &mut rng;
        let (ad, vd) = (config.att_dim, config.att_hidden);
        let visual_att = (v.visual == VisualInput::Attended).then(|| {
            let guide = map_dims.map_or(d.audio_dim, |(c, _)| c);
            GuidedAttention::new(store, rng, "visual_att", d.visual_channels, d.regions, guide, ad, vd)
        });
        let audio_att = (v.audio == AudioInput::AttendedMap).then(|| {
            let (c, r) = map_dims.expect("checked");
            GuidedAttention::new(store, rng, "audio_att", c, r, d.visual_channels, ad, vd)
        });
        let audio_feat = match v.audio {
            AudioInput::None => 0,
            AudioInput::Vector => d.audio_dim,
            AudioInput::Map | AudioInput::AttendedMap => map_dims.expect("checked").0,
        };
        let visual_feat = d.visual_channels;
        let h = config.hidden;
        let c = d.num_classes;
        let linear = |store: &mut ParamStore, rng: &mut _, name: &str, i, o| {
            Dense::new(store, rng, name, i, o, true, Activation::Identity)
        };
        let spec = &config.fusion;
        let head = if !v.bimodal() {
            let input = if v.audio != AudioInput::None { audio_feat } else { visual_feat };
            Head::Unimodal {
                lstm: LstmCell::new(store, rng, "lstm", input, h),
                head: linear(store, rng, "head", h, c),
            }
        } else {
            match spec.placement {
                Placement::Early => {
                    let fusion = Fusion::new(store, rng, "fusion", spec, audio_feat, visual_feat, Some(c))?;
                    Head::Early {
                        lstm: LstmCell::new(store, rng, "lstm", fusion.out_dim(), h),
                        head: linear(store, rng, "head", h, c),
                        fusion,
                    }
                }
                Placement::Late => {
                    let lstm_a = LstmCell::new(store, rng, "lstm_a", audio_feat, h);
                    let lstm_v = LstmCell::new(store, rng, "lstm_v", visual_feat, h);
                    let fusion = Fusion::new(store, rng, "fusion", spec, h, h, Some(c))?;
                    let head = (!fusion.produces_logits()).then(|| linear(store, rng, "head", fusion.out_dim(), c));
                    Head::Late { lstm_a, lstm_v, fusion, head }
                }
                Placement::Decision => {
                    let lstm_a = LstmCell::new(store, rng, "lstm_a", audio_feat, h);
                    let lstm_v = LstmCell::new(store, rng, "lstm_v", visual_feat, h);
                    let head_a = linear(store, rng, "head_a", h, c);
                    let head_v = linear(store, rng, "head_v", h, c);
                    let fspec = FusionSpec { joint_dim: c, ..spec.clone() };
                    let fusion = Fusion::new(store, rng, "fusion", &fspec, c, c, Some(c))?;
                    Head::Decision { lstm_a, lstm_v, head_a, head_v, fusion }
                }
            }
        };
        Ok(Self {
            config,
            visual_att,
            audio_att,
            head,
        })
    }

    pub fn num_lstms(&self) -> usize {
        match self.head {
            Head::Unimodal { .. } | Head::Early { .. } => 1,
            Head::Late { .. } | Head::Decision { .. } => 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.config.dims.num_classes
    }

    fn check_dims(&self, seq: &FeatureSequence) -> Result<()> {
        let got = FeatureDims::of(seq);
        let want = self.config.dims;
        let maps_ok = !self.config.variant.uses_audio_map() || got.audio_map == want.audio_map;
        if got.visual_channels != want.visual_channels
            || got.regions != want.regions
            || got.audio_dim != want.audio_dim
            || got.num_classes != want.num_classes
            || !maps_ok
        {
            if self.config.variant.uses_audio_map() && got.audio_map.is_none() {
                return Err(Error::Unavailable(format!("{}: no audio spatial maps", seq.video_id)));
            }
            return dim_err(format!("{}: features {got:?} do not match model {want:?}", seq.video_id));
        }
        Ok(())
    }

    /// Per-segment audio and visual features fed to the temporal model.
    fn segment_features(&self, s: &mut Session, seq: &FeatureSequence, f: &mut Forward) -> Result<(Vec<Var>, Vec<Var>)> {
        let v = self.config.variant;
        let (mut audio, mut visual) = (Vec::new(), Vec::new());
        for t in 0..seq.len() {
            let a_vec = s.input(seq.audio[t].clone());
            let a_map = match (&seq.audio_maps, v.uses_audio_map()) {
                (Some(maps), true) => Some(s.input(maps[t].clone())),
                _ => None,
            };
            let v_map = s.input(seq.visual[t].clone());
            let v_pool = s.input(Tensor::vector(pool_regions(&seq.visual[t]))?);
            let a_pool = match a_map {
                Some(m) => Some(s.mean_axis(m, 1)?),
                None => None,
            };
            match v.audio {
                AudioInput::None => {}
                AudioInput::Vector => audio.push(a_vec),
                AudioInput::Map => audio.push(a_pool.expect("checked")),
                AudioInput::AttendedMap => {
                    let params = self.audio_att.as_ref().expect("built");
                    let (ctx, att) = attention::visual_guided_audio(s, params, a_map, v_pool)?;
                    audio.push(ctx);
                    f.audio_att.push(att);
                }
            }
            match v.visual {
                VisualInput::None => {}
                VisualInput::Pooled => visual.push(v_pool),
                VisualInput::Attended => {
                    let params = self.visual_att.as_ref().expect("built");
                    let guide = a_pool.unwrap_or(a_vec);
                    let (ctx, att) = attention::audio_guided_visual(s, params, v_map, guide)?;
                    visual.push(ctx);
                    f.visual_att.push(att);
                }
            }
        }
        Ok((audio, visual))
    }

    /// Records the full forward pass for `seq`.
    pub fn forward(&self, s: &mut Session, seq: &FeatureSequence) -> Result<Forward> {
        self.check_dims(seq)?;
        let mut f = Forward {
            logits: Vec::new(),
            visual_att: Vec::new(),
            audio_att: Vec::new(),
        };
        let (audio, visual) = self.segment_features(s, seq, &mut f)?;
        let t_len = seq.len();
        f.logits = match &self.head {
            Head::Unimodal { lstm, head } => {
                let xs = if audio.is_empty() { &visual } else { &audio };
                let hs = run_sequence(s, lstm, xs)?;
                hs.into_iter().map(|h| head.forward(s, h)).collect::<Result<_>>()?
            }
            Head::Early { fusion, lstm, head } => {
                let joint = (0..t_len)
                    .map(|t| fusion.forward(s, audio[t], visual[t]))
                    .collect::<Result<Vec<_>>>()?;
                let hs = run_sequence(s, lstm, &joint)?;
                hs.into_iter().map(|h| head.forward(s, h)).collect::<Result<_>>()?
            }
            Head::Late { lstm_a, lstm_v, fusion, head } => {
                let ha = run_sequence(s, lstm_a, &audio)?;
                let hv = run_sequence(s, lstm_v, &visual)?;
                let mut out = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let j = fusion.forward(s, ha[t], hv[t])?;
                    out.push(match head {
                        Some(hd) => hd.forward(s, j)?,
                        None => j,
                    });
                }
                out
            }
            Head::Decision { lstm_a, lstm_v, head_a, head_v, fusion } => {
                let ha = run_sequence(s, lstm_a, &audio)?;
                let hv = run_sequence(s, lstm_v, &visual)?;
                let mut out = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let la = head_a.forward(s, ha[t])?;
                    let lv = head_v.forward(s, hv[t])?;
                    out.push(fusion.forward(s, la, lv)?);
                }
                out
            }
        };
        Ok(f)
    }

    /// Logits `m_1..m_T` as plain vectors.
    pub fn forward_segments(&self, store: &ParamStore, seq: &FeatureSequence) -> Result<Vec<Vec<f64>>> {
        let mut s = Session::inference(store);
        let f = self.forward(&mut s, seq)?;
        Ok(f.logits.iter().map(|&l| s.data(l).to_vec()).collect())
    }

    pub fn predict_segments(&self, store: &ParamStore, seq: &FeatureSequence) -> Result<Vec<usize>> {
        Ok(self.forward_segments(store, seq)?.iter().map(|m| argmax(m)).collect())
    }

    pub fn attention_maps(&self, store: &ParamStore, seq: &FeatureSequence) -> Result<Vec<SegmentAttention>> {
        let mut s = Session::inference(store);
        let f = self.forward(&mut s, seq)?;
        let get = |list: &[Var], t: usize| {
            list.get(t).map(|&v| AttentionMap {
                weights: s.data(v).to_vec(),
            })
        };
        Ok((0..seq.len())
            .map(|t| SegmentAttention {
                visual: get(&f.visual_att, t),
                audio: get(&f.audio_att, t),
            })
            .collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(m: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in m.iter().enumerate() {
        if v > m[best] {
            best = i;
        }
    }
    best
}

/// Mean over segments of the cross-entropy against each segment label.
pub fn supervised_loss(s: &mut Session, logits: &[Var], labels: &[usize]) -> Result<Var> {
    if logits.len() != labels.len() || logits.is_empty() {
        return dim_err(format!("{} logit vectors for {} labels", logits.len(), labels.len()));
    }
    let terms = logits
        .iter()
        .zip(labels)
        .map(|(&m, &y)| s.softmax_cross_entropy(m, y))
        .collect::<Result<Vec<_>>>()?;
    let all = s.stack(&terms)?;
    Ok(s.mean(all))
}

/// `m̂ = (1/T) Σ_t m_t`.
pub fn mil_pool(s: &mut Session, logits: &[Var]) -> Result<Var> {
    if logits.is_empty() {
        return dim_err("MIL pooling needs at least one segment");
    }
    let all = s.stack(logits)?;
    s.mean_axis(all, 0)
}

/// Cross-entropy of `softmax(m̂)` against the video label.
pub fn weak_loss(s: &mut Session, logits: &[Var], video_label: usize) -> Result<Var> {
    let pooled = mil_pool(s, logits)?;
    s.softmax_cross_entropy(pooled, video_label)
}

pub fn task_loss(s: &mut Session, logits: &[Var], seq: &FeatureSequence, task: Task) -> Result<Var> {
    match task {
        Task::Supervised => supervised_loss(s, logits, &seq.segment_labels),
        Task::Weak => weak_loss(s, logits, seq.video_label),
    }
}

/// Fraction of positions where `predictions` equals `labels`.
pub fn overall_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return dim_err(format!("{} predictions for {} labels", predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return contract_err("accuracy of an empty evaluation set");
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}
