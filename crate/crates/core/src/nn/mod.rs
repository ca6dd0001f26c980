//! Parameters, the per-forward-pass [`Session`], dense layers and Adam.

mod adam;

pub use adam::{Adam, AdamConfig};

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{dim_err, Result};
use crate::tensor::{central_difference, GradCheck, Tape, Tensor, Var};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("positive shape");
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn accumulate(&mut self, grads: &ParamGrads) -> Result<()> {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Replaces the values (not the gradients) of every entry.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return dim_err("parameter stores differ in layout");
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return dim_err(format!(
                    "parameter shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                ));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Per-parameter gradients gathered from one backward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Adds `other` into `self`, entry by entry in parameter order.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (acc, g) in self.0.iter_mut().zip(&other.0) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                    None => *acc = Some(g.clone()),
                }
            }
        }
    }
}

/// One forward pass over a [`ParamStore`].
///
/// Parameters are copied onto the tape the first time they are used.
pub struct Session<'p> {
    tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'p> Session<'p> {
    /// A session whose parameters are differentiable.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            track: true,
        }
    }

    /// A session for evaluation only; nothing requires gradients.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.params.get(id);
        let leaf = Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .expect("stored tensors are valid")
            .with_requires_grad(self.track);
        let v = self.tape.leaf(leaf);
        self.bound[id.0] = Some(v);
        v
    }

    /// Records a non-differentiable input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Runs backward from `loss` and collects the gradients of every bound
    /// parameter.
    pub fn backward(mut self, loss: Var) -> Result<ParamGrads> {
        self.tape.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| self.tape.grad(v).map(<[f64]>::to_vec)))
            .collect();
        Ok(ParamGrads(grads))
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

impl Deref for Session<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

/// Compares the tape gradients of `loss` with respect to every parameter in
/// `store` against central differences with step `step`.
///
/// Parameters the loss never touches get an analytic gradient of zero.
pub fn check_param_grads<F>(store: &ParamStore, step: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let mut s = Session::new(store);
    let l = loss(&mut s)?;
    let grads = s.backward(l)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            grads
                .get(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.get(id).numel()])
        })
        .collect();
    let values: Vec<Vec<f64>> = store.tensors.iter().map(|t| t.data().to_vec()).collect();
    let mut probe = store.clone();
    let mut failure = None;
    let numeric = central_difference(&values, step, |vals| {
        for (t, v) in probe.tensors.iter_mut().zip(vals) {
            t.data_mut().copy_from_slice(v);
        }
        let mut s = Session::inference(&probe);
        match loss(&mut s) {
            Ok(l) => s.data(l)[0],
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(GradCheck::new(analytic, numeric))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, s: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => s.tanh(x),
            Activation::Sigmoid => s.sigmoid(x),
            Activation::Relu => s.relu(x),
        }
    }
}

/// `act(x · W + b)` with `W: [in × out]`; `x` may be `[in]` or `[n × in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        activation: Activation,
    ) -> Self {
        let weight = store.uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng);
        let bias = bias.then(|| store.uniform(format!("{name}.bias"), &[out_dim], in_dim, rng));
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        if s.shape(x).last() != Some(&self.in_dim) {
            return dim_err(format!(
                "dense layer expects trailing dim {}, got {:?}",
                self.in_dim,
                s.shape(x)
            ));
        }
        let w = s.param(self.weight);
        let mut y = s.matmul(x, w)?;
        if let Some(b) = self.bias {
            let b = s.param(b);
            y = s.add(y, b)?;
        }
        Ok(self.activation.apply(&mut s.tape, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_matches_manual() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(1);
        let d = Dense::new(&mut store, &mut rng, "d", 3, 2, true, Activation::Tanh);
        let x = vec![0.5, -1.0, 2.0];
        let mut s = Session::inference(&store);
        let xv = s.input(Tensor::vector(x.clone()).unwrap());
        let y = d.forward(&mut s, xv).unwrap();
        let w = store.get(d.weight);
        let b = store.get(d.bias.unwrap());
        for j in 0..2 {
            let mut acc = b.data()[j];
            for i in 0..3 {
                acc += x[i] * w.at2(i, j);
            }
            assert!((s.data(y)[j] - acc.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut store = ParamStore::new();
        let id = store.uniform("w", &[16, 16], 16, &mut seeded_rng(3));
        assert!(store.get(id).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn session_gradients_reach_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut s = Session::new(&store);
        let w = s.param(id);
        let w2 = s.param(id);
        assert_eq!(w, w2);
        let sq = s.square(w);
        let l = s.sum(sq);
        let g = s.backward(l).unwrap();
        assert_eq!(g.get(id).unwrap(), &[2.0, 4.0]);
    }
}
