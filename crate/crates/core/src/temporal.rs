//! Single-layer unidirectional LSTM.
//!
//! Gate pre-activations are packed `[i | f | g | o]`, each of width `H`:
//!
//! ```text
//! i = σ(·)  f = σ(·)  g = tanh(·)  o = σ(·)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::nn::{ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `[in × 4H]`
    pub w_input: ParamId,
    /// `[H × 4H]`
    pub w_hidden: ParamId,
    /// `[4H]`
    pub bias: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl LstmCell {
    /// Uniform fan-in init; the forget-gate bias starts at 1.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, input_dim: usize, hidden: usize) -> Self {
        let fan_in = input_dim + hidden;
        let w_input = store.uniform(format!("{name}.w_input"), &[input_dim, 4 * hidden], fan_in, rng);
        let w_hidden = store.uniform(format!("{name}.w_hidden"), &[hidden, 4 * hidden], fan_in, rng);
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::vector(b).expect("hidden > 0"));
        Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn gates(&self, s: &mut Session, pre: Var, c_prev: Var) -> Result<(Var, Var)> {
        let h = self.hidden;
        let i = s.narrow(pre, 0, 0, h)?;
        let f = s.narrow(pre, 0, h, h)?;
        let g = s.narrow(pre, 0, 2 * h, h)?;
        let o = s.narrow(pre, 0, 3 * h, h)?;
        let i = s.sigmoid(i);
        let f = s.sigmoid(f);
        let g = s.tanh(g);
        let o = s.sigmoid(o);
        let keep = s.mul(f, c_prev)?;
        let write = s.mul(i, g)?;
        let c = s.add(keep, write)?;
        let tc = s.tanh(c);
        let h = s.mul(o, tc)?;
        Ok((h, c))
    }

    fn recurrent(&self, s: &mut Session, x_proj: Var, h_prev: Var) -> Result<Var> {
        let wh = s.param(self.w_hidden);
        let b = s.param(self.bias);
        let hh = s.matmul(h_prev, wh)?;
        let pre = s.add(x_proj, hh)?;
        s.add(pre, b)
    }

    fn check_state(&self, s: &Session, v: Var, what: &str) -> Result<()> {
        if s.shape(v) != [self.hidden] {
            return dim_err(format!("{what} must have length {}, got {:?}", self.hidden, s.shape(v)));
        }
        Ok(())
    }

    pub fn zero_state(&self, s: &mut Session) -> (Var, Var) {
        let h = s.input(Tensor::zeros(&[self.hidden]));
        let c = s.input(Tensor::zeros(&[self.hidden]));
        (h, c)
    }
}

/// One step: returns `(h_t, c_t)`.
pub fn lstm_step(s: &mut Session, cell: &LstmCell, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    if s.shape(x) != [cell.input_dim] {
        return dim_err(format!("LSTM input must have length {}, got {:?}", cell.input_dim, s.shape(x)));
    }
    cell.check_state(s, h_prev, "h_prev")?;
    cell.check_state(s, c_prev, "c_prev")?;
    let wx = s.param(cell.w_input);
    let xp = s.matmul(x, wx)?;
    let pre = cell.recurrent(s, xp, h_prev)?;
    cell.gates(s, pre, c_prev)
}

/// Unrolls from zero state and returns `h_1..h_T`.
///
/// The input projection of all steps is computed as one matrix product.
pub fn run_sequence(s: &mut Session, cell: &LstmCell, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return dim_err("LSTM needs at least one step");
    }
    for (t, &x) in inputs.iter().enumerate() {
        if s.shape(x) != [cell.input_dim] {
            return dim_err(format!(
                "LSTM step {t}: input must have length {}, got {:?}",
                cell.input_dim,
                s.shape(x)
            ));
        }
    }
    let xs = s.stack(inputs)?;
    let wx = s.param(cell.w_input);
    let proj = s.matmul(xs, wx)?;
    let (mut h, mut c) = cell.zero_state(s);
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let xp = s.row(proj, t)?;
        let pre = cell.recurrent(s, xp, h)?;
        (h, c) = cell.gates(s, pre, c)?;
        out.push(h);
    }
    Ok(out)
}
