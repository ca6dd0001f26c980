//! Guided spatial attention over region maps.
//!
//! A map `[c × k]` holds one `c`-channel feature per region. A guide vector
//! from the other modality scores each region with additive attention:
//!
//! ```text
//! x_i = w_f · tanh(P_m U_m(map_i) + P_g U_g(guide))
//! att = softmax(x)
//! context = Σ_i att_i map_i
//! ```
//!
//! `U_m`, `U_g` are dense layers with tanh projecting to `d`; `P_m`, `P_g`
//! are bias-free projections to the score width `h`.

use std::io::Write;

use rand::Rng;

use crate::data::pool_regions;
use crate::error::{dim_err, Error, Result};
use crate::nn::{Activation, Dense, ParamStore, Session};
use crate::tensor::{Tensor, Var};

pub const DEFAULT_PROJ_DIM: usize = 128;
pub const DEFAULT_SCORE_DIM: usize = 64;

#[derive(Clone, Debug)]
pub struct GuidedAttention {
    pub map_proj: Dense,
    pub guide_proj: Dense,
    pub map_hidden: Dense,
    pub guide_hidden: Dense,
    pub score: Dense,
    channels: usize,
    regions: usize,
    guide_dim: usize,
}

impl GuidedAttention {
    /// `d` is the shared projection width, `h` the score hidden width.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        regions: usize,
        guide_dim: usize,
        d: usize,
        h: usize,
    ) -> Self {
        Self {
            map_proj: Dense::new(store, rng, &format!("{name}.u_map"), channels, d, true, Activation::Tanh),
            guide_proj: Dense::new(store, rng, &format!("{name}.u_guide"), guide_dim, d, true, Activation::Tanh),
            map_hidden: Dense::new(store, rng, &format!("{name}.p_map"), d, h, false, Activation::Identity),
            guide_hidden: Dense::new(store, rng, &format!("{name}.p_guide"), d, h, false, Activation::Identity),
            score: Dense::new(store, rng, &format!("{name}.w_f"), h, 1, false, Activation::Identity),
            channels,
            regions,
            guide_dim,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn guide_dim(&self) -> usize {
        self.guide_dim
    }

    /// Attends `map: [c × k]` under `guide: [g]`; returns `(context [c], att [k])`.
    pub fn forward(&self, s: &mut Session, map: Var, guide: Var) -> Result<(Var, Var)> {
        let shape = s.shape(map).to_vec();
        if shape != [self.channels, self.regions] {
            return dim_err(format!(
                "attention expects a {}x{} map, got {shape:?}",
                self.channels, self.regions
            ));
        }
        if s.shape(guide) != [self.guide_dim] {
            return dim_err(format!(
                "attention expects a guide of length {}, got {:?}",
                self.guide_dim,
                s.shape(guide)
            ));
        }
        let regions = s.transpose(map)?;
        let um = self.map_proj.forward(s, regions)?;
        let pm = self.map_hidden.forward(s, um)?;
        let ug = self.guide_proj.forward(s, guide)?;
        let pg = self.guide_hidden.forward(s, ug)?;
        let joint = s.add(pm, pg)?;
        let joint = s.tanh(joint);
        let scores = self.score.forward(s, joint)?;
        let scores = s.reshape(scores, vec![self.regions])?;
        let att = s.softmax(scores)?;
        let context = s.matmul(map, att)?;
        Ok((context, att))
    }
}

/// Attention weights over the `k` regions of one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
}

impl AttentionMap {
    /// Nonnegative and summing to one within `tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.weights.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// One CSV line of `k` weights.
    pub fn write_csv_row<W: Write>(&self, out: &mut W) -> Result<()> {
        let line: Vec<String> = self.weights.iter().map(|w| format!("{w:.9}")).collect();
        writeln!(out, "{}", line.join(","))?;
        Ok(())
    }

    /// Binary PGM (P5) of the weights min-max scaled to 0..=255. A square
    /// region count is laid out as a square grid, anything else as one row.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> Result<()> {
        let k = self.weights.len();
        let side = (k as f64).sqrt().round() as usize;
        let (w, h) = if side * side == k { (side, side) } else { (k, 1) };
        let lo = self.weights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels: Vec<u8> = self
            .weights
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        write!(out, "P5\n{w} {h}\n255\n")?;
        out.write_all(&pixels)?;
        Ok(())
    }
}

/// Evaluates `params` on concrete tensors without recording gradients.
pub fn guided_attend(
    params: &GuidedAttention,
    store: &ParamStore,
    map: &Tensor,
    guide: &Tensor,
) -> Result<(Tensor, AttentionMap)> {
    let mut s = Session::inference(store);
    let m = s.input(map.clone());
    let g = s.input(guide.clone());
    let (ctx, att) = params.forward(&mut s, m, g)?;
    Ok((
        s.value(ctx).clone(),
        AttentionMap {
            weights: s.data(att).to_vec(),
        },
    ))
}

/// Visual map `[d_v × k]` attended under the segment's audio vector.
pub fn audio_guided_visual(
    s: &mut Session,
    params: &GuidedAttention,
    visual_map: Var,
    audio: Var,
) -> Result<(Var, Var)> {
    params.forward(s, visual_map, audio)
}

/// Audio spatial map attended under the region-pooled visual vector.
pub fn visual_guided_audio(
    s: &mut Session,
    params: &GuidedAttention,
    audio_map: Option<Var>,
    visual_pooled: Var,
) -> Result<(Var, Var)> {
    let Some(map) = audio_map else {
        return Err(Error::Unavailable(
            "visual-guided audio attention needs audio spatial maps in the feature files".into(),
        ));
    };
    params.forward(s, map, visual_pooled)
}

/// Both attention directions, computed independently.
#[derive(Clone, Debug)]
pub struct CoAttention {
    /// Guided by the region-pooled audio map.
    pub visual: GuidedAttention,
    /// Guided by the region-pooled visual map.
    pub audio: GuidedAttention,
}

pub struct CoAttended {
    pub visual: Var,
    pub visual_att: Var,
    pub audio: Var,
    pub audio_att: Var,
}

pub fn co_attend(
    s: &mut Session,
    params: &CoAttention,
    visual_map: Var,
    audio_map: Option<Var>,
) -> Result<CoAttended> {
    let Some(audio_map) = audio_map else {
        return Err(Error::Unavailable("co-attention needs audio spatial maps".into()));
    };
    let v_pool = s.mean_axis(visual_map, 1)?;
    let a_pool = s.mean_axis(audio_map, 1)?;
    let (visual, visual_att) = audio_guided_visual(s, &params.visual, visual_map, a_pool)?;
    let (audio, audio_att) = visual_guided_audio(s, &params.audio, Some(audio_map), v_pool)?;
    Ok(CoAttended {
        visual,
        visual_att,
        audio,
        audio_att,
    })
}

/// Global average over regions; the no-attention path.
pub fn average_pool(map: &Tensor) -> Tensor {
    Tensor::vector(pool_regions(map)).expect("maps have at least one channel")
}
