//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the graph; node indices are therefore a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::tensor::{strides_of, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fused operation with a hand-written vector-Jacobian product.
///
/// The forward result is computed by whoever constructs the op; the op keeps
/// whatever it needs for the backward rule.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input, in input order. `None` means zero.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
    ) -> Vec<Option<Vec<T>>>;
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { a_map: Option<Vec<usize>>, b_map: Option<Vec<usize>> },
    Sub { a_map: Option<Vec<usize>>, b_map: Option<Vec<usize>> },
    Mul { a_map: Option<Vec<usize>>, b_map: Option<Vec<usize>> },
    Affine { scale: T },
    MatMul { m: usize, k: usize, n: usize },
    Transpose { rows: usize, cols: usize },
    Reshape,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    GatherRows { indices: Vec<usize> },
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Silu,
    Softplus,
    Sum { axis: usize },
    Mean { axis: usize },
    SumAll,
    Softmax { axis: usize },
    LayerNorm { xhat: Vec<T>, inv_std: Vec<T> },
    Conv1dCausal { width: usize },
    CrossEntropy { gold: usize, probs: Vec<T> },
    Custom(Box<dyn CustomOp<T>>),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Softplus => "softplus",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumAll => "sum_all",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1dCausal { .. } => "conv1d_causal",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom(op) => op.name(),
        }
    }
}

/// Recorded node: the value, how it was produced, and its parents.
pub(crate) struct TapeNode<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) parents: Vec<Var>,
}

/// Computation graph owning every intermediate value.
pub struct Graph<T: Scalar> {
    nodes: Vec<TapeNode<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a tensor; it is differentiated iff `tensor.requires_grad`.
    pub fn insert(&mut self, tensor: Tensor<T>) -> Var {
        self.nodes.push(TapeNode {
            value: tensor,
            op: Op::Leaf,
            parents: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a constant (no gradient).
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.insert(tensor.with_requires_grad(false))
    }

    /// Adds a trainable leaf.
    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        self.insert(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient populated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Records a node produced by `op`. The tape entry only matters when some
    /// parent is differentiable.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| self.requires_grad(*p));
        let op = if requires_grad { op } else { Op::Leaf };
        let parents = if requires_grad { parents } else { Vec::new() };
        self.nodes.push(TapeNode {
            value: value.with_requires_grad(requires_grad),
            op,
            parents,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the output of a [`CustomOp`].
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(output, Op::Custom(op), inputs.to_vec())
    }

    // ---------------------------------------------------------------- binary

    fn broadcast(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Option<Vec<usize>>, Option<Vec<usize>>)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let a_map = index_map(&sa, &out_shape);
        let b_map = index_map(&sb, &out_shape);
        let (da, db) = (self.data(a), self.data(b));
        let n: usize = out_shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let x = da[a_map.as_ref().map_or(i, |m| m[i])];
                let y = db[b_map.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        Ok((Tensor::new(out_shape, data)?, a_map, b_map))
    }

    /// Elementwise `a + b` with trailing-dimension broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, a_map, b_map) = self.broadcast(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a_map, b_map }, vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, a_map, b_map) = self.broadcast(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a_map, b_map }, vec![a, b]))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, a_map, b_map) = self.broadcast(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a_map, b_map }, vec![a, b]))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine { scale }, vec![a])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -T::one(), T::one())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.data(a), self.data(b), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { m, k, n }, vec![a, b]))
    }

    /// `x W^T + b` for `x: [r, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let wt = self.transpose(weight)?;
        let y = self.matmul(x, wt)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "transpose expects rank 2".into(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let d = self.data(a);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = d[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], out)?;
        Ok(self.push(value, Op::Transpose { rows, cols }, vec![a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape.to_vec()).map_err(|_| Error::ShapeMismatch {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: shape.to_vec(),
        })?;
        Ok(self.push(value, Op::Reshape, vec![a]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                shape: first,
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { axis }, parts.to_vec()))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidAxis { op: "slice", axis, shape: s });
        }
        if start >= end || end > s[axis] {
            return Err(Error::InvalidSpan { start, end, len: s[axis] });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let d = self.data(a);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner;
            out.extend_from_slice(&d[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Slice { axis, start }, vec![a]))
    }

    /// Row lookup: `table[indices[i], :]` stacked into `[len, d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s,
                reason: "gather_rows expects a rank-2 table".into(),
            });
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for table with {} rows",
                s[0]
            )));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![indices.len(), s[1]], out)?;
        Ok(self.push(value, Op::GatherRows { indices: indices.to_vec() }, vec![table]))
    }

    // ----------------------------------------------------------------- unary

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, vec![a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log, |x| x.ln())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid, scalar::sigmoid)
    }

    /// Subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu, |x| x.max(T::zero()))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu, |x| x * scalar::sigmoid(x))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus, scalar::softplus)
    }

    // ------------------------------------------------------------ reductions

    fn reduce_axis(&mut self, a: Var, axis: usize, op: &'static str) -> Result<(Tensor<T>, usize)> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidAxis { op, axis, shape: s });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let n = s[axis];
        let d = self.data(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &d[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok((Tensor::new(shape, out)?, n))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (out, _) = self.reduce_axis(a, axis, "sum")?;
        Ok(self.push(out, Op::Sum { axis }, vec![a]))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (mut out, n) = self.reduce_axis(a, axis, "mean")?;
        let inv = T::one() / T::of_usize(n);
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(out, Op::Mean { axis }, vec![a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of_usize(n))
    }

    // ------------------------------------------------------------ composites

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidAxis { op: "softmax", axis, shape: s });
        }
        let out = softmax_values(self.value(a), axis);
        Ok(self.push(out, Op::Softmax { axis }, vec![a]))
    }

    /// Normalizes each row of the last dimension, then `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().expect("rank >= 1");
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: s.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if eps <= T::zero() {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let rows = self.value(x).numel() / d;
        let dn = T::of_usize(d);
        let (xv, gv, bv) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, Op::LayerNorm { xhat, inv_std }, vec![x, gamma, beta]))
    }

    /// Depthwise causal convolution: `x: [L, D]`, `kernel: [W, D]`, `bias: [D]`.
    ///
    /// `y[t, d] = bias[d] + sum_w kernel[w, d] * x[t - (W - 1) + w, d]`, with
    /// out-of-range `x` read as zero.
    pub fn conv1d_causal(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (sx, sk, sb) = (self.shape(x).to_vec(), self.shape(kernel).to_vec(), self.shape(bias).to_vec());
        if sk.len() != 2 || sk[0] < 1 {
            return Err(Error::InvalidArgument(format!(
                "conv1d_causal kernel must be [W >= 1, D], got {sk:?}"
            )));
        }
        if sx.len() != 2 || sx[1] != sk[1] || sb != [sk[1]] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_causal",
                lhs: sx,
                rhs: sk,
            });
        }
        let (len, dim, width) = (sx[0], sx[1], sk[0]);
        let (xv, kv, bv) = (self.data(x), self.data(kernel), self.data(bias));
        let mut out = vec![T::zero(); len * dim];
        for t in 0..len {
            let row = &mut out[t * dim..(t + 1) * dim];
            row.copy_from_slice(bv);
            for w in 0..width {
                let src = t + w;
                if src < width - 1 {
                    continue;
                }
                let src = src - (width - 1);
                for d in 0..dim {
                    row[d] += kv[w * dim + d] * xv[src * dim + d];
                }
            }
        }
        let value = Tensor::new(vec![len, dim], out)?;
        Ok(self.push(value, Op::Conv1dCausal { width }, vec![x, kernel, bias]))
    }

    /// `-log softmax(logits)[gold]` via log-sum-exp; `logits` holds one row.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let z = self.data(logits);
        if gold >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "gold class {gold} out of range for {} logits",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let probs: Vec<T> = z.iter().map(|&v| (v - lse).exp()).collect();
        let loss = lse - z[gold];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { gold, probs }, vec![logits]))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `rng` is `None` or the
    /// rate is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        let Some(rng) = rng else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} must be < 1")));
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    // -------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across fan-out
    /// and are stored on every differentiable node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.value.requires_grad && !matches!(node.op, Op::Leaf) {
                let parent_grads = self.node_backward(node, &g);
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[p.0].value.requires_grad {
                        continue;
                    }
                    match &mut grads[p.0] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad {
                node.value.grad = g;
            }
        }
        Ok(())
    }

    fn node_backward(&self, node: &TapeNode<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let input = |k: usize| &self.nodes[node.parents[k].0].value;
        let out = &node.value;
        let unary = |f: &dyn Fn(T, T) -> T| -> Vec<Option<Vec<T>>> {
            // f(input, output) is the local derivative.
            let x = input(0).data();
            let y = out.data();
            vec![Some((0..g.len()).map(|i| g[i] * f(x[i], y[i])).collect())]
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a_map, b_map } => vec![
                Some(reduce_broadcast(g, a_map.as_deref(), input(0).numel(), T::one())),
                Some(reduce_broadcast(g, b_map.as_deref(), input(1).numel(), T::one())),
            ],
            Op::Sub { a_map, b_map } => vec![
                Some(reduce_broadcast(g, a_map.as_deref(), input(0).numel(), T::one())),
                Some(reduce_broadcast(g, b_map.as_deref(), input(1).numel(), -T::one())),
            ],
            Op::Mul { a_map, b_map } => {
                let (a, b) = (input(0).data(), input(1).data());
                let at = |m: &Option<Vec<usize>>, i: usize| m.as_ref().map_or(i, |m| m[i]);
                let mut ga = vec![T::zero(); a.len()];
                let mut gb = vec![T::zero(); b.len()];
                for i in 0..g.len() {
                    let (ia, ib) = (at(a_map, i), at(b_map, i));
                    ga[ia] += g[i] * b[ib];
                    gb[ib] += g[i] * a[ia];
                }
                vec![Some(ga), Some(gb)]
            }
            Op::Affine { scale } => vec![Some(g.iter().map(|&v| v * *scale).collect())],
            Op::MatMul { m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (a, b) = (input(0).data(), input(1).data());
                let need_a = input(0).requires_grad;
                let need_b = input(1).requires_grad;
                let ga = need_a.then(|| {
                    // dA = G B^T
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            ga[i * k + p] = dot(grow, brow);
                        }
                    }
                    ga
                });
                let gb = need_b.then(|| {
                    // dB = A^T G
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            for (dst, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *dst += av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }
            Op::Transpose { rows, cols } => {
                let mut ga = vec![T::zero(); rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        ga[r * cols + c] = g[c * rows + r];
                    }
                }
                vec![Some(ga)]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Concat { axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis];
                let mut offset = 0;
                let mut res = Vec::with_capacity(node.parents.len());
                for k in 0..node.parents.len() {
                    let len = input(k).shape()[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    offset += len;
                    res.push(Some(gp));
                }
                res
            }
            Op::Slice { axis, start } => {
                let s = input(0).shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let len = out.shape()[*axis];
                let mut ga = vec![T::zero(); input(0).numel()];
                for o in 0..outer {
                    let dst = (o * s[*axis] + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(ga)]
            }
            Op::GatherRows { indices } => {
                let d = out.shape()[1];
                let mut ga = vec![T::zero(); input(0).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for (dst, &v) in ga[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dst += v;
                    }
                }
                vec![Some(ga)]
            }
            Op::Exp => unary(&|_, y| y),
            Op::Log => unary(&|x, _| T::one() / x),
            Op::Tanh => unary(&|_, y| T::one() - y * y),
            Op::Sigmoid => unary(&|_, y| y * (T::one() - y)),
            Op::Relu => unary(&|x, _| if x > T::zero() { T::one() } else { T::zero() }),
            Op::Silu => unary(&|x, _| {
                let s = scalar::sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }),
            Op::Softplus => unary(&|x, _| scalar::sigmoid(x)),
            Op::Sum { axis } | Op::Mean { axis } => {
                let s = input(0).shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let n = s[*axis];
                let f = if matches!(node.op, Op::Mean { .. }) {
                    T::one() / T::of_usize(n)
                } else {
                    T::one()
                };
                let mut ga = vec![T::zero(); input(0).numel()];
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut ga[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, &v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d = v * f;
                        }
                    }
                }
                vec![Some(ga)]
            }
            Op::SumAll => vec![Some(vec![g[0]; input(0).numel()])],
            Op::Softmax { axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let n = s[*axis];
                let y = out.data();
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            ga[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(ga)]
            }
            Op::LayerNorm { xhat, inv_std } => {
                let gamma = input(1).data();
                let d = gamma.len();
                let rows = inv_std.len();
                let dn = T::of_usize(d);
                let mut gx = vec![T::zero(); rows * d];
                let mut gg = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gamma[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                    }
                    let scale = inv_std[r] / dn;
                    for j in 0..d {
                        let dh = gr[j] * gamma[j];
                        gx[r * d + j] = scale * (dn * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![Some(gx), Some(gg), Some(gbeta)]
            }
            Op::Conv1dCausal { width } => {
                let width = *width;
                let (len, dim) = (out.shape()[0], out.shape()[1]);
                let (xv, kv) = (input(0).data(), input(1).data());
                let mut gx = vec![T::zero(); len * dim];
                let mut gk = vec![T::zero(); width * dim];
                let mut gb = vec![T::zero(); dim];
                for t in 0..len {
                    for d in 0..dim {
                        let gv = g[t * dim + d];
                        gb[d] += gv;
                        for w in 0..width {
                            if t + w < width - 1 {
                                continue;
                            }
                            let src = t + w - (width - 1);
                            gk[w * dim + d] += gv * xv[src * dim + d];
                            gx[src * dim + d] += gv * kv[w * dim + d];
                        }
                    }
                }
                vec![Some(gx), Some(gk), Some(gb)]
            }
            Op::CrossEntropy { gold, probs } => {
                let mut gz: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                gz[*gold] -= g[0];
                vec![Some(gz)]
            }
            Op::Custom(op) => {
                let inputs: Vec<&Tensor<T>> = (0..node.parents.len()).map(input).collect();
                op.backward(&inputs, out, g)
            }
        }
    }

    /// Name of the operation that produced `v` (diagnostics).
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

pub(crate) fn softmax_values<T: Scalar>(a: &Tensor<T>, axis: usize) -> Tensor<T> {
    let s = a.shape();
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let n = s[axis];
    let x = a.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..n {
                let e = (x[idx(k)] - max).exp();
                out[idx(k)] = e;
                sum += e;
            }
            for k in 0..n {
                out[idx(k)] /= sum;
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out += a[m, k] * b[k, n]`.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// Trailing-dimension broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index into `src`; `None` when the
/// shapes are identical.
fn index_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let n: usize = out.iter().product();
    let src_n: usize = src.iter().product();
    // suffix fast path, e.g. [L, D] + [D]
    if out.ends_with(src) {
        return Some((0..n).map(|i| i % src_n).collect());
    }
    let rank = out.len();
    let offset = rank - src.len();
    let src_strides = strides_of(src);
    let strides: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

fn reduce_broadcast<T: Scalar>(g: &[T], map: Option<&[usize]>, len: usize, sign: T) -> Vec<T> {
    match map {
        None => g.iter().map(|&v| v * sign).collect(),
        Some(map) => {
            let mut out = vec![T::zero(); len];
            for (i, &v) in g.iter().enumerate() {
                out[map[i]] += v * sign;
            }
            out
        }
    }
}
