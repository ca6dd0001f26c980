use super::kernels::{
    log_softmax_slice, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_slice,
};
use super::Tensor;
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, n: usize, p: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Sqrt(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softmax(Var),
    SoftmaxXent { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SumAxis { a: Var, outer: usize, len: usize, inner: usize },
    MaxAxis { a: Var, outer: usize, len: usize, inner: usize, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, outer: usize, inner: usize, lens: Vec<usize> },
    Transpose { a: Var, rows: usize, cols: usize },
    Reshape(Var),
    Narrow { a: Var, outer: usize, len: usize, inner: usize, start: usize, width: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so every node's inputs precede it.
/// [`Tape::backward`] walks the record once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(v) => v.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *acc = Some(g.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor as-is; it participates in differentiation iff its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let value = Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        };
        self.push(value, op)
    }

    // ---- linear algebra ------------------------------------------------

    /// Matrix product. Rank-1 operands act as a row vector on the left or a
    /// column vector on the right; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, n, a_row) = match sa.as_slice() {
            [n] => (1, *n, true),
            [m, n] => (*m, *n, false),
            _ => return dim_err(format!("matmul: left operand must be rank 1 or 2, got {sa:?}")),
        };
        let (n2, p, b_col) = match sb.as_slice() {
            [n] => (*n, 1, true),
            [n, p] => (*n, *p, false),
            _ => return dim_err(format!("matmul: right operand must be rank 1 or 2, got {sb:?}")),
        };
        if n != n2 {
            return dim_err(format!("matmul: inner dimensions differ for {sa:?} x {sb:?}"));
        }
        let mut out = vec![0.0; m * p];
        matmul_acc(self.data(a), self.data(b), &mut out, m, n, p);
        let shape = match (a_row, b_col) {
            (true, true) => vec![],
            (true, false) => vec![p],
            (false, true) => vec![m],
            (false, false) => vec![m, p],
        };
        Ok(self.push_derived(shape, out, &[a, b], Op::MatMul { a, b, m, n, p }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let &[rows, cols] = self.shape(a) else {
            return dim_err(format!("transpose needs a matrix, got {:?}", self.shape(a)));
        };
        let src = self.data(a);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = src[i * cols + j];
            }
        }
        Ok(self.push_derived(vec![cols, rows], out, &[a], Op::Transpose { a, rows, cols }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.iter().any(|&d| d == 0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape(a)));
        }
        let data = self.data(a).to_vec();
        Ok(self.push_derived(shape, data, &[a], Op::Reshape(a)))
    }

    // ---- elementwise ---------------------------------------------------

    /// `b` must match `a` exactly or match a trailing suffix of its shape.
    fn check_broadcast(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb || (sb.len() < sa.len() && sa.ends_with(sb) && !sb.is_empty()) {
            Ok(())
        } else {
            dim_err(format!("{name}: incompatible shapes {sa:?} and {sb:?}"))
        }
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        self.check_broadcast(name, a, b)?;
        let da = self.data(a);
        let db = self.data(b);
        let nb = db.len();
        Ok(da.iter().enumerate().map(|(i, &x)| f(x, db[i % nb])).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Mul { a, b }))
    }

    /// Elementwise maximum of two equal-shaped tensors; ties route the
    /// gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "maximum: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        let out = self.binary("maximum", a, b, f64::max)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Maximum { a, b }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_derived(shape, out, &[a], op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    // ---- normalisation and losses --------------------------------------

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 1 {
            return dim_err(format!("softmax expects a vector, got {:?}", self.shape(a)));
        }
        let out = softmax_slice(self.data(a))?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a], Op::Softmax(a)))
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        if self.value(logits).rank() != 1 {
            return dim_err(format!(
                "cross-entropy expects a logit vector, got {:?}",
                self.shape(logits)
            ));
        }
        let n = self.value(logits).numel();
        if target >= n {
            return contract_err(format!("label index {target} out of range for {n} classes"));
        }
        let logp = log_softmax_slice(self.data(logits))?;
        let probs = logp.iter().map(|v| v.exp()).collect();
        let loss = -logp[target];
        Ok(self.push_derived(
            vec![],
            vec![loss],
            &[logits],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
        ))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push_derived(vec![], vec![s], &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push_derived(vec![], vec![s], &[a], Op::Mean(a))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        Ok(self.push_derived(new_shape, out, &[a], Op::SumAxis { a, outer, len, inner }))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| crate::Error::Dimension(format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    /// Max over `axis`, removing it. Ties route gradient to the lowest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let src = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = l;
                    }
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        Ok(self.push_derived(
            new_shape,
            out,
            &[a],
            Op::MaxAxis {
                a,
                outer,
                len,
                inner,
                argmax,
            },
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return dim_err(format!("concat: shape {s:?} incompatible with {base:?} on axis {axis}"));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let src = self.data(p);
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push_derived(
            shape,
            out,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                lens,
            },
        ))
    }

    /// Stacks equal-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("stack of zero tensors");
        };
        let shape = self.shape(first).to_vec();
        if parts.iter().any(|&p| self.shape(p) != shape.as_slice()) {
            return dim_err("stack: tensors differ in shape");
        }
        let mut lifted = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut s = vec![1];
            s.extend_from_slice(&shape);
            lifted.push(self.reshape(p, s)?);
        }
        self.concat(&lifted, 0)
    }

    /// Takes `width` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, width: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        if width == 0 || start + width > len {
            return dim_err(format!(
                "narrow: range {start}..{} exceeds axis {axis} of {shape:?}",
                start + width
            ));
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let lo = (o * len + start) * inner;
            out.extend_from_slice(&src[lo..lo + width * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = width;
        Ok(self.push_derived(
            new_shape,
            out,
            &[a],
            Op::Narrow {
                a,
                outer,
                len,
                inner,
                start,
                width,
            },
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.narrow(a, 0, i, 1)?;
        let shape = self.shape(n)[1..].to_vec();
        self.reshape(n, shape)
    }

    // ---- backward ------------------------------------------------------

    /// Propagates gradients from the scalar `loss` to every reachable node
    /// that requires them. Gradients add onto any already stored.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        if loss.0 >= self.nodes.len() {
            return contract_err("loss is not on this tape");
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let needs = |v: Var| self.nodes[v.0].value.requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, n, p } => {
                if needs(a) {
                    let mut ga = vec![0.0; m * n];
                    matmul_bt_acc(g, self.data(b), &mut ga, m, n, p);
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let mut gb = vec![0.0; n * p];
                    matmul_at_acc(self.data(a), g, &mut gb, m, n, p);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if needs(a) {
                    add_into(&mut grads[a.0], g);
                }
                if needs(b) {
                    let nb = self.value(b).numel();
                    let mut gb = vec![0.0; nb];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % nb] += sign * gv;
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            &Op::Mul { a, b } => {
                let da = self.data(a);
                let db = self.data(b);
                let nb = db.len();
                if needs(a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * db[i % nb]).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let mut gb = vec![0.0; nb];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % nb] += gv * da[i];
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            &Op::Maximum { a, b } => {
                let da = self.data(a);
                let db = self.data(b);
                if needs(a) {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(da.iter().zip(db))
                        .map(|(&gv, (x, y))| if x >= y { gv } else { 0.0 })
                        .collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if needs(b) {
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(da.iter().zip(db))
                        .map(|(&gv, (x, y))| if x >= y { 0.0 } else { gv })
                        .collect();
                    add_into(&mut grads[b.0], &gb);
                }
            }
            &Op::Tanh(a) => {
                let ga: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Ln(a) => {
                let ga: Vec<f64> = g.iter().zip(self.data(a)).map(|(gv, x)| gv / x).collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Sqrt(a) => {
                // d sqrt(x) at x = 0 is taken as 0.
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &y)| if y > 0.0 { gv * 0.5 / y } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                add_into(&mut grads[a.0], &ga);
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => add_into(&mut grads[a.0], g),
            &Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(out).map(|(gv, y)| gv * y).sum();
                let ga: Vec<f64> = g.iter().zip(out).map(|(gv, y)| y * (gv - dot)).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            } => {
                let mut gl: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                gl[*target] -= g[0];
                add_into(&mut grads[logits.0], &gl);
            }
            &Op::Sum(a) => {
                let ga = vec![g[0]; self.value(a).numel()];
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Mean(a) => {
                let n = self.value(a).numel();
                let ga = vec![g[0] / n as f64; n];
                add_into(&mut grads[a.0], &ga);
            }
            &Op::SumAxis { a, outer, len, inner } => {
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        ga[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::MaxAxis {
                a,
                outer,
                len,
                inner,
                argmax,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let l = argmax[o * inner + i];
                        ga[(o * len + l) * inner + i] += g[o * inner + i];
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Concat {
                parts,
                outer,
                inner,
                lens,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&p, &len) in parts.iter().zip(lens) {
                    if needs(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..*outer {
                            let lo = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[lo..lo + len * inner]);
                        }
                        add_into(&mut grads[p.0], &gp);
                    }
                    offset += len;
                }
            }
            &Op::Transpose { a, rows, cols } => {
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        ga[i * cols + j] = g[j * rows + i];
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            &Op::Narrow {
                a,
                outer,
                len,
                inner,
                start,
                width,
            } => {
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let lo = (o * len + start) * inner;
                    ga[lo..lo + width * inner]
                        .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                }
                add_into(&mut grads[a.0], &ga);
            }
        }
    }
}
