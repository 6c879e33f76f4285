//! Adam with bias correction and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.entries().iter().map(|e| vec![T::zero(); e.value.numel()]).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

/// Fails with the parameter path when any gradient is NaN or infinite.
pub fn check_finite<T: Scalar>(store: &ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
    for (e, g) in store.entries().iter().zip(grads) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {} at flat index {i} is {}", e.name, g[i])));
        }
    }
    Ok(())
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &[Vec<T>], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} parameters, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    check_finite(store, grads)?;
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = &grads[k];
        let value = store.get_mut(id);
        if g.len() != value.numel() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: value.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, theta) in value.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![v]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![1.0]], &mut st, &AdamConfig::with_lr(0.002)).unwrap();
        // m̂ = 1, v̂ = 1 -> θ = -0.002 / (1 + 1e-8)
        let expected = -0.002 / (1.0 + 1e-8);
        assert!((s.get(s.id("w").unwrap()).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0]], &mut st, &AdamConfig::with_lr(0.002)).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn repeated_steps_are_monotone() {
        let mut s = store(0.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig::with_lr(0.01);
        let mut prev = 0.0;
        // hand iteration of the update with g = -2
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut theta = 0.0f64;
        for t in 1..=3 {
            adam_step(&mut s, &[vec![-2.0]], &mut st, &cfg).unwrap();
            m = 0.9 * m + 0.1 * -2.0;
            v = 0.999 * v + 0.001 * 4.0;
            theta -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            let now = s.get(s.id("w").unwrap()).data()[0];
            assert!(now > prev);
            assert!((now - theta).abs() < 1e-15);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(0.0);
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[vec![f64::NAN]], &mut st, &AdamConfig::with_lr(0.1)).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clipping() {
        let mut g: Vec<Vec<f64>> = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }
}
