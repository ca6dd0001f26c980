//! Audio-visual fusion operators.
//!
//! Every operator maps `(h_a, h_v)` to one joint vector. With `W·` denoting
//! bias-free linear maps unless stated:
//!
//! | name | joint |
//! |---|---|
//! | `additive` | `tanh(W_a h_a + W_v h_v)` |
//! | `max_pool` | `max(tanh(W_a h_a), tanh(W_v h_v))` |
//! | `gated` | `tanh(W_a h_a) ⊙ σ(W_g h_v) + tanh(W_v h_v) ⊙ σ(W_g' h_a)` |
//! | `multimodal_bilinear` | `Pᵀ(U h_a ⊙ V h_v)`, rank 32 |
//! | `gmu` | `z ⊙ tanh(W_a h_a) + (1 − z) ⊙ tanh(W_v h_v)`, `z = σ(W_z [h_a; h_v] + b_z)` |
//! | `gated_bilinear` | `z ⊙ bilinear + (1 − z) ⊙ additive`, same gate as `gmu` |
//! | `concat` | `W [h_a; h_v] + b` |
//! | `mrn` | one branch updated: `tanh(h_a + f(h_a, h_v))` |
//! | `dmrn` | both branches updated with a shared `f`, joint = their mean |
//! | `dmrfe` | two separate DMRN blocks, each with a softmax head, probabilities averaged |
//!
//! `f(x, y) = tanh(W_x x + W_y y + b)` is the additive fusion function of the
//! residual operators.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::{Activation, Dense, ParamStore, Session};
use crate::tensor::Var;

pub const DEFAULT_JOINT_DIM: usize = 128;
pub const BILINEAR_RANK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOp {
    Additive,
    MaxPool,
    Gated,
    MultimodalBilinear,
    Gmu,
    GatedBilinear,
    Concat,
    Mrn,
    Dmrn,
    Dmrfe,
}

impl FusionOp {
    pub const ALL: [FusionOp; 10] = [
        FusionOp::Additive,
        FusionOp::MaxPool,
        FusionOp::Gated,
        FusionOp::MultimodalBilinear,
        FusionOp::Gmu,
        FusionOp::GatedBilinear,
        FusionOp::Concat,
        FusionOp::Mrn,
        FusionOp::Dmrn,
        FusionOp::Dmrfe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::Additive => "additive",
            FusionOp::MaxPool => "max_pool",
            FusionOp::Gated => "gated",
            FusionOp::MultimodalBilinear => "multimodal_bilinear",
            FusionOp::Gmu => "gmu",
            FusionOp::GatedBilinear => "gated_bilinear",
            FusionOp::Concat => "concat",
            FusionOp::Mrn => "mrn",
            FusionOp::Dmrn => "dmrn",
            FusionOp::Dmrfe => "dmrfe",
        }
    }

    fn residual(self) -> bool {
        matches!(self, FusionOp::Mrn | FusionOp::Dmrn | FusionOp::Dmrfe)
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FusionOp::ALL.into_iter().find(|op| op.name() == s).ok_or_else(|| {
            let names: Vec<&str> = FusionOp::ALL.iter().map(|o| o.name()).collect();
            Error::Config(format!("unknown fusion operator {s:?}; valid: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Fuse per segment before a single shared LSTM.
    Early,
    /// Fuse the two LSTMs' hidden states.
    Late,
    /// Fuse per-modality class logits.
    Decision,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Early, Placement::Late, Placement::Decision];

    pub fn name(self) -> &'static str {
        match self {
            Placement::Early => "early",
            Placement::Late => "late",
            Placement::Decision => "decision",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Placement::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown placement {s:?}; valid: early, late, decision")))
    }
}

/// Which branch `mrn` updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrnBranch {
    Audio,
    Visual,
}

impl FromStr for MrnBranch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(MrnBranch::Audio),
            "visual" => Ok(MrnBranch::Visual),
            _ => Err(Error::Config(format!("unknown mrn branch {s:?}; valid: audio, visual"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub operator: FusionOp,
    pub placement: Placement,
    pub joint_dim: usize,
    pub blocks: usize,
    pub mrn_branch: MrnBranch,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            operator: FusionOp::Concat,
            placement: Placement::Late,
            joint_dim: DEFAULT_JOINT_DIM,
            blocks: 1,
            mrn_branch: MrnBranch::Audio,
        }
    }
}

impl FusionSpec {
    pub fn new(operator: FusionOp, placement: Placement) -> Self {
        Self {
            operator,
            placement,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.operator == FusionOp::Dmrfe && self.placement != Placement::Late {
            return Err(Error::Config(format!(
                "dmrfe is only defined for late placement, not {}",
                self.placement
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("fusion needs at least one residual block".into()));
        }
        if self.joint_dim == 0 {
            return Err(Error::Config("joint dim must be positive".into()));
        }
        Ok(())
    }
}

/// The shared additive fusion function `f` of one residual block.
#[derive(Clone, Debug)]
pub struct DmrnBlock {
    pub from_audio: Dense,
    pub from_visual: Dense,
}

impl DmrnBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        Self {
            from_audio: Dense::new(store, rng, &format!("{name}.f_a"), dim, dim, false, Activation::Identity),
            from_visual: Dense::new(store, rng, &format!("{name}.f_v"), dim, dim, true, Activation::Identity),
        }
    }

    pub fn dim(&self) -> usize {
        self.from_audio.in_dim()
    }

    /// `f(h_a, h_v)`.
    pub fn shared(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<Var> {
        let a = self.from_audio.forward(s, h_a)?;
        let v = self.from_visual.forward(s, h_v)?;
        let u = s.add(a, v)?;
        Ok(s.tanh(u))
    }
}

/// `(h_a', h_v', h*)` for one block.
pub fn dmrn(s: &mut Session, block: &DmrnBlock, h_a: Var, h_v: Var) -> Result<(Var, Var, Var)> {
    let (na, nv) = (s.shape(h_a).to_vec(), s.shape(h_v).to_vec());
    if na != nv || na != [block.dim()] {
        return dim_err(format!("dmrn inputs {na:?} and {nv:?} must both be [{}]", block.dim()));
    }
    let u = block.shared(s, h_a, h_v)?;
    let a = s.add(h_a, u)?;
    let a = s.tanh(a);
    let v = s.add(h_v, u)?;
    let v = s.tanh(v);
    let sum = s.add(a, v)?;
    let joint = s.scale(sum, 0.5);
    Ok((a, v, joint))
}

fn dmrn_stack(s: &mut Session, blocks: &[DmrnBlock], mut h_a: Var, mut h_v: Var) -> Result<Var> {
    let mut joint = None;
    for b in blocks {
        let (a, v, j) = dmrn(s, b, h_a, h_v)?;
        h_a = a;
        h_v = v;
        joint = Some(j);
    }
    Ok(joint.expect("at least one block"))
}

#[derive(Clone, Debug)]
struct Branches {
    audio: Dense,
    visual: Dense,
}

impl Branches {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, na: usize, nv: usize, out: usize, act: Activation) -> Self {
        Self {
            audio: Dense::new(store, rng, &format!("{name}_a"), na, out, false, act),
            visual: Dense::new(store, rng, &format!("{name}_v"), nv, out, false, act),
        }
    }

    fn apply(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<(Var, Var)> {
        Ok((self.audio.forward(s, h_a)?, self.visual.forward(s, h_v)?))
    }
}

#[derive(Clone, Debug)]
struct Bilinear {
    u: Dense,
    v: Dense,
    p: Dense,
}

impl Bilinear {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, na: usize, nv: usize, out: usize) -> Self {
        Self {
            u: Dense::new(store, rng, &format!("{name}.u"), na, BILINEAR_RANK, false, Activation::Identity),
            v: Dense::new(store, rng, &format!("{name}.v"), nv, BILINEAR_RANK, false, Activation::Identity),
            p: Dense::new(store, rng, &format!("{name}.p"), BILINEAR_RANK, out, false, Activation::Identity),
        }
    }

    fn apply(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<Var> {
        let a = self.u.forward(s, h_a)?;
        let v = self.v.forward(s, h_v)?;
        let m = s.mul(a, v)?;
        self.p.forward(s, m)
    }
}

/// `z = σ(W_z [h_a; h_v] + b_z)`, split into the two input blocks of `W_z`.
#[derive(Clone, Debug)]
pub struct Gate {
    pub from_audio: Dense,
    pub from_visual: Dense,
}

impl Gate {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, na: usize, nv: usize, out: usize) -> Self {
        Self {
            from_audio: Dense::new(store, rng, &format!("{name}.z_a"), na, out, true, Activation::Identity),
            from_visual: Dense::new(store, rng, &format!("{name}.z_v"), nv, out, false, Activation::Identity),
        }
    }

    fn apply(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<Var> {
        let a = self.from_audio.forward(s, h_a)?;
        let v = self.from_visual.forward(s, h_v)?;
        let pre = s.add(a, v)?;
        Ok(s.sigmoid(pre))
    }
}

fn blend(s: &mut Session, z: Var, x: Var, y: Var) -> Result<Var> {
    let zx = s.mul(z, x)?;
    let nz = s.one_minus(z);
    let zy = s.mul(nz, y)?;
    s.add(zx, zy)
}

#[derive(Clone, Debug)]
enum Kind {
    Additive(Branches),
    MaxPool(Branches),
    Gated { tanh: Branches, gate_v: Dense, gate_a: Dense },
    Bilinear(Bilinear),
    Gmu { tanh: Branches, gate: Gate },
    GatedBilinear { bilinear: Bilinear, additive: Branches, gate: Gate },
    Concat(Dense),
    Mrn { blocks: Vec<DmrnBlock>, branch: MrnBranch },
    Dmrn(Vec<DmrnBlock>),
    Dmrfe { audio: Vec<DmrnBlock>, visual: Vec<DmrnBlock>, head_a: Dense, head_v: Dense },
}

/// A fusion operator instantiated for concrete input dims.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub spec: FusionSpec,
    kind: Kind,
    adapt_a: Option<Dense>,
    adapt_v: Option<Dense>,
    dim_a: usize,
    dim_v: usize,
    out_dim: usize,
}

impl Fusion {
    /// Builds an operator over inputs of length `dim_a`, `dim_v` producing
    /// `spec.joint_dim`, or `num_classes` logits for `dmrfe`.
    ///
    /// Residual operators need both inputs at the joint dim; a linear
    /// adapter is inserted in front of any input that is not.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        spec: &FusionSpec,
        dim_a: usize,
        dim_v: usize,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        spec.validate()?;
        let j = spec.joint_dim;
        let (mut adapt_a, mut adapt_v) = (None, None);
        let (mut na, mut nv) = (dim_a, dim_v);
        if spec.operator.residual() {
            if dim_a != j {
                adapt_a = Some(Dense::new(store, rng, &format!("{name}.adapt_a"), dim_a, j, true, Activation::Identity));
                na = j;
            }
            if dim_v != j {
                adapt_v = Some(Dense::new(store, rng, &format!("{name}.adapt_v"), dim_v, j, true, Activation::Identity));
                nv = j;
            }
        }
        let blocks = |store: &mut ParamStore, rng: &mut _, tag: &str| -> Vec<DmrnBlock> {
            (0..spec.blocks)
                .map(|b| DmrnBlock::new(store, rng, &format!("{name}.{tag}{b}"), j))
                .collect()
        };
        let mut out_dim = j;
        let kind = match spec.operator {
            FusionOp::Additive => Kind::Additive(Branches::new(store, rng, &format!("{name}.w"), na, nv, j, Activation::Identity)),
            FusionOp::MaxPool => Kind::MaxPool(Branches::new(store, rng, &format!("{name}.w"), na, nv, j, Activation::Tanh)),
            FusionOp::Gated => Kind::Gated {
                tanh: Branches::new(store, rng, &format!("{name}.w"), na, nv, j, Activation::Tanh),
                gate_v: Dense::new(store, rng, &format!("{name}.g_v"), nv, j, false, Activation::Sigmoid),
                gate_a: Dense::new(store, rng, &format!("{name}.g_a"), na, j, false, Activation::Sigmoid),
            },
            FusionOp::MultimodalBilinear => Kind::Bilinear(Bilinear::new(store, rng, &format!("{name}.mb"), na, nv, j)),
            FusionOp::Gmu => Kind::Gmu {
                tanh: Branches::new(store, rng, &format!("{name}.w"), na, nv, j, Activation::Tanh),
                gate: Gate::new(store, rng, name, na, nv, j),
            },
            FusionOp::GatedBilinear => Kind::GatedBilinear {
                bilinear: Bilinear::new(store, rng, &format!("{name}.mb"), na, nv, j),
                additive: Branches::new(store, rng, &format!("{name}.w"), na, nv, j, Activation::Identity),
                gate: Gate::new(store, rng, name, na, nv, j),
            },
            FusionOp::Concat => Kind::Concat(Dense::new(store, rng, &format!("{name}.linear"), na + nv, j, true, Activation::Identity)),
            FusionOp::Mrn => Kind::Mrn {
                blocks: blocks(store, rng, "block"),
                branch: spec.mrn_branch,
            },
            FusionOp::Dmrn => Kind::Dmrn(blocks(store, rng, "block")),
            FusionOp::Dmrfe => {
                let Some(c) = num_classes else {
                    return Err(Error::Contract("dmrfe needs a classification head per branch".into()));
                };
                out_dim = c;
                Kind::Dmrfe {
                    audio: blocks(store, rng, "audio_block"),
                    visual: blocks(store, rng, "visual_block"),
                    head_a: Dense::new(store, rng, &format!("{name}.head_a"), j, c, true, Activation::Identity),
                    head_v: Dense::new(store, rng, &format!("{name}.head_v"), j, c, true, Activation::Identity),
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
            adapt_a,
            adapt_v,
            dim_a,
            dim_v,
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// True when the output is already class logits (`dmrfe`).
    pub fn produces_logits(&self) -> bool {
        matches!(self.kind, Kind::Dmrfe { .. })
    }

    /// The operator before any trailing linear map: `[h_a; h_v]` for
    /// `concat`, the joint vector otherwise.
    pub fn raw(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<Var> {
        if s.shape(h_a) != [self.dim_a] || s.shape(h_v) != [self.dim_v] {
            return dim_err(format!(
                "{} fusion expects [{}] and [{}], got {:?} and {:?}",
                self.spec.operator,
                self.dim_a,
                self.dim_v,
                s.shape(h_a),
                s.shape(h_v)
            ));
        }
        let h_a = match &self.adapt_a {
            Some(d) => d.forward(s, h_a)?,
            None => h_a,
        };
        let h_v = match &self.adapt_v {
            Some(d) => d.forward(s, h_v)?,
            None => h_v,
        };
        match &self.kind {
            Kind::Additive(w) => {
                let (a, v) = w.apply(s, h_a, h_v)?;
                let sum = s.add(a, v)?;
                Ok(s.tanh(sum))
            }
            Kind::MaxPool(w) => {
                let (a, v) = w.apply(s, h_a, h_v)?;
                s.maximum(a, v)
            }
            Kind::Gated { tanh, gate_v, gate_a } => {
                let (a, v) = tanh.apply(s, h_a, h_v)?;
                let ga = gate_v.forward(s, h_v)?;
                let gv = gate_a.forward(s, h_a)?;
                let x = s.mul(a, ga)?;
                let y = s.mul(v, gv)?;
                s.add(x, y)
            }
            Kind::Bilinear(b) => b.apply(s, h_a, h_v),
            Kind::Gmu { tanh, gate } => {
                let (a, v) = tanh.apply(s, h_a, h_v)?;
                let z = gate.apply(s, h_a, h_v)?;
                blend(s, z, a, v)
            }
            Kind::GatedBilinear { bilinear, additive, gate } => {
                let b = bilinear.apply(s, h_a, h_v)?;
                let (a, v) = additive.apply(s, h_a, h_v)?;
                let sum = s.add(a, v)?;
                let add = s.tanh(sum);
                let z = gate.apply(s, h_a, h_v)?;
                blend(s, z, b, add)
            }
            Kind::Concat(_) => s.concat(&[h_a, h_v], 0),
            Kind::Mrn { blocks, branch } => {
                let (mut upd, other) = match branch {
                    MrnBranch::Audio => (h_a, h_v),
                    MrnBranch::Visual => (h_v, h_a),
                };
                for b in blocks {
                    let u = match branch {
                        MrnBranch::Audio => b.shared(s, upd, other)?,
                        MrnBranch::Visual => b.shared(s, other, upd)?,
                    };
                    let r = s.add(upd, u)?;
                    upd = s.tanh(r);
                }
                Ok(upd)
            }
            Kind::Dmrn(blocks) => dmrn_stack(s, blocks, h_a, h_v),
            Kind::Dmrfe { audio, visual, head_a, head_v } => {
                let ja = dmrn_stack(s, audio, h_a, h_v)?;
                let jv = dmrn_stack(s, visual, h_a, h_v)?;
                let la = head_a.forward(s, ja)?;
                let lv = head_v.forward(s, jv)?;
                let pa = s.softmax(la)?;
                let pv = s.softmax(lv)?;
                let sum = s.add(pa, pv)?;
                Ok(s.scale(sum, 0.5))
            }
        }
    }

    /// Joint vector, or class logits `ln p` for `dmrfe`.
    pub fn forward(&self, s: &mut Session, h_a: Var, h_v: Var) -> Result<Var> {
        let raw = self.raw(s, h_a, h_v)?;
        match &self.kind {
            Kind::Concat(linear) => linear.forward(s, raw),
            Kind::Dmrfe { .. } => Ok(s.ln(raw)),
            _ => Ok(raw),
        }
    }
}
