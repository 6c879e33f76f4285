//! Graph convolution over the syntactic adjacency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencySource {
    /// Soft arc probabilities from an external parser.
    ParserProbability,
    /// 0/1 arcs from CoNLL-U heads.
    ConlluFallback,
    /// No arcs: every token only sees itself.
    Identity,
}

/// Dense `L x L` non-negative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SynAdjacency<T> {
    pub matrix: Tensor<T>,
    pub source: AdjacencySource,
}

impl<T: Scalar> SynAdjacency<T> {
    pub fn new(matrix: Tensor<T>, source: AdjacencySource) -> Result<Self> {
        match matrix.shape() {
            [r, c] if r == c => Ok(Self { matrix, source }),
            s => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "adjacency must be square".into(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Adds self-loops on non-pad positions and row-normalizes. A non-pad row
/// that sums to zero becomes a one-hot self-loop; pad rows and columns are
/// zero. `pad_mask[i]` is true for real tokens; `None` means no padding.
pub fn normalize_adjacency<T: Scalar>(raw: &SynAdjacency<T>, pad_mask: Option<&[bool]>) -> Result<SynAdjacency<T>> {
    let n = raw.len();
    if let Some(m) = pad_mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch {
                op: "normalize_adjacency",
                lhs: vec![n],
                rhs: vec![m.len()],
            });
        }
    }
    let real = |i: usize| pad_mask.is_none_or(|m| m[i]);
    let src = raw.matrix.data();
    if let Some(v) = src.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("adjacency entries must be finite and >= 0, got {v}")));
    }
    let mut out = vec![T::zero(); n * n];
    for i in (0..n).filter(|&i| real(i)) {
        let row = &mut out[i * n..(i + 1) * n];
        for j in (0..n).filter(|&j| real(j)) {
            row[j] = src[i * n + j];
        }
        row[i] += T::one();
        let s: T = row.iter().copied().sum();
        if s > T::zero() && s.is_finite() {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = T::zero());
            row[i] = T::one();
        }
    }
    SynAdjacency::new(Tensor::new(vec![n, n], out)?, raw.source)
}

#[derive(Clone, Copy, Debug)]
pub struct GcnLayerParams {
    /// `[D, D]`
    pub weight: ParamId,
    /// `[D]`
    pub bias: ParamId,
}

impl GcnLayerParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dim: usize, init_range: f64, rng: &mut R) -> Self {
        Self {
            weight: store.init(format!("{prefix}.weight"), &[dim, dim], Init::Uniform(init_range), rng),
            bias: store.init(format!("{prefix}.bias"), &[dim], Init::Uniform(init_range), rng),
        }
    }

    pub fn vars(&self, bound: &Bound) -> (Var, Var) {
        (bound[self.weight], bound[self.bias])
    }
}

/// `ReLU(A · H · Wᵀ + b)`.
pub fn gcn_layer<T: Scalar>(g: &mut Graph<T>, h: Var, a: Var, weight: Var, bias: Var) -> Result<Var> {
    let ah = g.matmul(a, h)?;
    let z = g.linear(ah, weight, Some(bias))?;
    Ok(g.relu(z))
}

/// Stacked GCN layers with dropout between layers (training only).
pub fn syngcn_forward<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    h: Var,
    a: Var,
    layers: &[(Var, Var)],
    dropout: f64,
    mut rng: Option<&mut R>,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("syngcn needs at least one layer".into()));
    }
    let mut x = h;
    for (l, &(w, b)) in layers.iter().enumerate() {
        if l > 0 {
            x = g.dropout(x, dropout, rng.as_deref_mut())?;
        }
        x = gcn_layer(g, x, a, w, b)?;
    }
    Ok(x)
}
