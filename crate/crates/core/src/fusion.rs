//! KAN-gated fusion, pooling, classification and evaluation metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kan::{kan_layer, BSplineGrid};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// One gate KAN: spline coefficients `[D, D, n_basis]` and, optionally, a
/// `[D, D]` base weight applied to `SiLU(x)`.
#[derive(Clone, Copy, Debug)]
pub struct KanGateParams {
    pub coeffs: ParamId,
    pub base: Option<ParamId>,
}

impl KanGateParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.model_dim();
        let n_basis = cfg.kan_grid_size + cfg.kan_degree;
        Self {
            coeffs: store.init(format!("{prefix}.coeffs"), &[d, d, n_basis], Init::Normal(cfg.kan_init_std), rng),
            base: cfg
                .kan_base_branch
                .then(|| store.init(format!("{prefix}.base"), &[d, d], Init::Uniform(cfg.init_range), rng)),
        }
    }
}

/// `σ(KAN(H))`, every entry in (0, 1).
pub fn kan_gate<T: Scalar>(g: &mut Graph<T>, h: Var, coeffs: Var, base: Option<Var>, grid: &BSplineGrid<T>) -> Result<Var> {
    let mut z = kan_layer(g, h, coeffs, grid)?;
    if let Some(w) = base {
        let s = g.silu(h);
        let lin = g.linear(s, w, None)?;
        z = g.add(z, lin)?;
    }
    Ok(g.sigmoid(z))
}

/// `g_syn ⊙ H_syn + (1 − g_syn) ⊙ g_sem ⊙ H_sem`.
pub fn gated_fuse<T: Scalar>(g: &mut Graph<T>, h_syn: Var, h_sem: Var, g_syn: Var, g_sem: Var) -> Result<Var> {
    let shapes = [g.shape(h_syn), g.shape(h_sem), g.shape(g_syn), g.shape(g_sem)];
    if shapes.iter().any(|s| *s != shapes[0]) {
        return Err(Error::ShapeMismatch {
            op: "gated_fuse",
            lhs: g.shape(h_syn).to_vec(),
            rhs: g.shape(h_sem).to_vec(),
        });
    }
    let a = g.mul(g_syn, h_syn)?;
    let inv = g.one_minus(g_syn);
    let b = g.mul(inv, g_sem)?;
    let b = g.mul(b, h_sem)?;
    g.add(a, b)
}

/// Mean of the rows of `h: [L, D]` where `mask` is true; returns `[1, D]`.
pub fn mean_pool<T: Scalar>(g: &mut Graph<T>, h: Var, mask: &[bool]) -> Result<Var> {
    let len = g.shape(h)[0];
    if mask.len() != len {
        return Err(Error::ShapeMismatch {
            op: "mean_pool",
            lhs: vec![len],
            rhs: vec![mask.len()],
        });
    }
    let rows: Vec<usize> = (0..len).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("mean_pool over an empty mask".into()));
    }
    let dim = g.shape(h)[1];
    let picked = if rows.len() == len { h } else { g.gather_rows(h, &rows)? };
    let m = g.mean_axis(picked, 0)?;
    g.reshape(m, &[1, dim])
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierParams {
    /// `[C, D]`
    pub weight: ParamId,
    /// `[C]`
    pub bias: ParamId,
}

impl ClassifierParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let u = Init::Uniform(cfg.init_range);
        Self {
            weight: store.init("classifier.weight", &[cfg.num_classes, cfg.model_dim()], u, rng),
            bias: store.init("classifier.bias", &[cfg.num_classes], u, rng),
        }
    }

    pub fn vars(&self, b: &Bound) -> (Var, Var) {
        (b[self.weight], b[self.bias])
    }
}

/// Logits `[1, C]` from a pooled `[1, D]` row.
pub fn logits<T: Scalar>(g: &mut Graph<T>, pooled: Var, weight: Var, bias: Var) -> Result<Var> {
    g.linear(pooled, weight, Some(bias))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
}

/// Softmax over logits; ties in the argmax go to the lowest index.
pub fn predict(logits: &[f64]) -> Prediction {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    let probabilities: Vec<f64> = exps.iter().map(|e| e / s).collect();
    let mut label = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[label] {
            label = i;
        }
    }
    Prediction { probabilities, label }
}

/// Classifier forward on a pooled row; returns the prediction.
pub fn classify<T: Scalar>(g: &mut Graph<T>, pooled: Var, weight: Var, bias: Var) -> Result<Prediction> {
    let z = logits(g, pooled, weight, bias)?;
    let v: Vec<f64> = g.data(z).iter().map(|x| x.as_f64()).collect();
    Ok(predict(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n: usize,
}

/// Accuracy and macro-F1 over `num_classes` classes. Per-class F1 is 0
/// when precision + recall is 0.
pub fn metrics(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<Metrics> {
    if preds.len() != golds.len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: vec![preds.len()],
            rhs: vec![golds.len()],
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("metrics over zero samples".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut gold_count = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(golds) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::InvalidArgument(format!("label out of range: pred {p}, gold {y}")));
        }
        pred_count[p] += 1;
        gold_count[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let precision = if pred_count[c] > 0 { tp[c] as f64 / pred_count[c] as f64 } else { 0.0 };
            let recall = if gold_count[c] > 0 { tp[c] as f64 / gold_count[c] as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / preds.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / num_classes as f64,
        per_class_f1,
        n: preds.len(),
    })
}
