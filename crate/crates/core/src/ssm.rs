//! Diagonal state-space kernels: zero-order-hold discretization, the
//! sequential recurrence, its global-convolution form, and the
//! input-dependent (selective) scan used by the Mamba block.
//!
//! Shapes: `D` channels, `N` states per channel, `L` timesteps. The state
//! matrix is real diagonal, stored as `a: [D, N]`.
//!
//! The input matrix is discretized with the standard ZOH form
//! `B̄ = (ΔA)^{-1}(exp(ΔA) - I)·ΔB`, which for diagonal `A` reduces to
//! `((exp(Δa) - 1) / a)·b`.

use crate::autograd::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Below this `|Δ·a|` the ZOH input coefficient switches to its Taylor series.
pub const ZOH_TAYLOR_THRESHOLD: f64 = 1e-6;

/// Continuous-time parameters.
#[derive(Clone, Debug)]
pub struct SsmParams<T> {
    /// Diagonal of `A` per channel, `[D, N]`.
    pub a: Tensor<T>,
    pub mode: SsmMode<T>,
}

#[derive(Clone, Debug)]
pub enum SsmMode<T> {
    /// Time-invariant: `b, c: [D, N]`, `delta: [D]`.
    Lti {
        b: Tensor<T>,
        c: Tensor<T>,
        delta: Tensor<T>,
    },
    /// Per-timestep: `b, c: [L, N]` shared across channels, `delta: [L, D]`.
    Selective {
        b: Tensor<T>,
        c: Tensor<T>,
        delta: Tensor<T>,
    },
}

/// Discrete parameters `(Ā, B̄, C)`.
#[derive(Clone, Debug)]
pub enum DiscreteSsm<T> {
    /// `a_bar, b_bar, c: [D, N]`.
    Lti {
        a_bar: Tensor<T>,
        b_bar: Tensor<T>,
        c: Tensor<T>,
    },
    /// `a_bar, b_bar: [L, D, N]`, `c: [L, N]`.
    Selective {
        a_bar: Tensor<T>,
        b_bar: Tensor<T>,
        c: Tensor<T>,
    },
}

/// Convolution kernel `K̄[m, d] = C_d · Ā_d^m · B̄_d`, stored `[M, D]`.
#[derive(Clone, Debug)]
pub struct ConvKernel<T> {
    pub k: Tensor<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn len(&self) -> usize {
        self.k.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl<T: Scalar> SsmParams<T> {
    /// Real diagonal initialization `a_n = -(n + 1)` for every channel.
    pub fn diagonal_init(channels: usize, state: usize) -> Tensor<T> {
        let data = (0..channels)
            .flat_map(|_| (0..state).map(|n| -T::of_usize(n + 1)))
            .collect();
        Tensor::new(vec![channels, state], data).expect("non-empty")
    }

    pub fn channels(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a.shape()[1]
    }
}

impl<T: Scalar> DiscreteSsm<T> {
    pub fn lti(a_bar: Tensor<T>, b_bar: Tensor<T>, c: Tensor<T>) -> Result<Self> {
        if a_bar.rank() != 2 || a_bar.shape() != b_bar.shape() || a_bar.shape() != c.shape() {
            return Err(Error::ShapeMismatch {
                op: "DiscreteSsm::lti",
                lhs: a_bar.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        Ok(Self::Lti { a_bar, b_bar, c })
    }

    pub fn channels(&self) -> usize {
        match self {
            Self::Lti { a_bar, .. } => a_bar.shape()[0],
            Self::Selective { a_bar, .. } => a_bar.shape()[1],
        }
    }

    pub fn state_size(&self) -> usize {
        match self {
            Self::Lti { a_bar, .. } => a_bar.shape()[1],
            Self::Selective { a_bar, .. } => a_bar.shape()[2],
        }
    }
}

/// `(Ā, B̄ / b)` for one diagonal entry: `exp(Δa)` and `(exp(Δa) - 1) / a`.
#[inline]
pub fn zoh_coefficients<T: Scalar>(a: T, delta: T) -> (T, T) {
    let z = delta * a;
    let a_bar = z.exp();
    let coef = if z.abs() < T::lit(ZOH_TAYLOR_THRESHOLD) {
        delta * (T::one() + z / T::lit(2.0) + z * z / T::lit(6.0))
    } else {
        z.exp_m1() / a
    };
    (a_bar, coef)
}

/// `∂/∂a` of `(exp(Δa) - 1) / a`.
#[inline]
fn zoh_coef_da<T: Scalar>(a: T, delta: T, a_bar: T) -> T {
    let z = delta * a;
    if z.abs() < T::lit(1e-2) {
        // Δ² Σ_k z^k (k+1)/(k+2)!
        let series = T::lit(0.5)
            + z * (T::lit(1.0 / 3.0)
                + z * (T::lit(1.0 / 8.0)
                    + z * (T::lit(1.0 / 30.0) + z * (T::lit(1.0 / 144.0) + z * T::lit(1.0 / 840.0)))));
        delta * delta * series
    } else {
        (z * a_bar - z.exp_m1()) / (a * a)
    }
}

/// Exact zero-order-hold discretization for diagonal `A`.
pub fn discretize_zoh<T: Scalar>(params: &SsmParams<T>) -> Result<DiscreteSsm<T>> {
    let (dch, n) = (params.channels(), params.state_size());
    let a = params.a.data();
    let check_delta = |delta: &Tensor<T>| -> Result<()> {
        match delta.data().iter().find(|d| !(**d > T::zero())) {
            Some(bad) => Err(Error::InvalidArgument(format!("delta must be > 0, got {bad}"))),
            None => Ok(()),
        }
    };
    match &params.mode {
        SsmMode::Lti { b, c, delta } => {
            check_delta(delta)?;
            if b.shape() != [dch, n] || c.shape() != [dch, n] || delta.shape() != [dch] {
                return Err(Error::ShapeMismatch {
                    op: "discretize_zoh",
                    lhs: params.a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut a_bar = vec![T::zero(); dch * n];
            let mut b_bar = vec![T::zero(); dch * n];
            for d in 0..dch {
                for s in 0..n {
                    let i = d * n + s;
                    let (ab, coef) = zoh_coefficients(a[i], delta.data()[d]);
                    a_bar[i] = ab;
                    b_bar[i] = coef * b.data()[i];
                }
            }
            Ok(DiscreteSsm::Lti {
                a_bar: Tensor::new(vec![dch, n], a_bar)?,
                b_bar: Tensor::new(vec![dch, n], b_bar)?,
                c: c.clone(),
            })
        }
        SsmMode::Selective { b, c, delta } => {
            check_delta(delta)?;
            let len = delta.shape()[0];
            if delta.shape() != [len, dch] || b.shape() != [len, n] || c.shape() != [len, n] {
                return Err(Error::ShapeMismatch {
                    op: "discretize_zoh",
                    lhs: delta.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut a_bar = vec![T::zero(); len * dch * n];
            let mut b_bar = vec![T::zero(); len * dch * n];
            for t in 0..len {
                for d in 0..dch {
                    for s in 0..n {
                        let i = (t * dch + d) * n + s;
                        let (ab, coef) = zoh_coefficients(a[d * n + s], delta.data()[t * dch + d]);
                        a_bar[i] = ab;
                        b_bar[i] = coef * b.data()[t * n + s];
                    }
                }
            }
            Ok(DiscreteSsm::Selective {
                a_bar: Tensor::new(vec![len, dch, n], a_bar)?,
                b_bar: Tensor::new(vec![len, dch, n], b_bar)?,
                c: c.clone(),
            })
        }
    }
}

/// Output of [`ssm_scan_states`].
#[derive(Clone, Debug)]
pub struct ScanOutput<T> {
    /// `[L, D]`
    pub y: Tensor<T>,
    /// `[L, D, N]`
    pub states: Tensor<T>,
}

/// Sequential recurrence `h_t = Ā ⊙ h_{t-1} + B̄_t x_t`, `y_t = Σ_n C_{t,n} h_{t,n}`.
pub fn ssm_scan<T: Scalar>(d: &DiscreteSsm<T>, x: &Tensor<T>, h0: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    Ok(ssm_scan_states(d, x, h0)?.y)
}

/// [`ssm_scan`] that also returns every hidden state.
pub fn ssm_scan_states<T: Scalar>(
    d: &DiscreteSsm<T>,
    x: &Tensor<T>,
    h0: Option<&Tensor<T>>,
) -> Result<ScanOutput<T>> {
    let (dch, n) = (d.channels(), d.state_size());
    if x.rank() != 2 || x.shape()[1] != dch {
        return Err(Error::ShapeMismatch {
            op: "ssm_scan",
            lhs: x.shape().to_vec(),
            rhs: vec![dch, n],
        });
    }
    let len = x.shape()[0];
    if let DiscreteSsm::Selective { a_bar, .. } = d {
        if a_bar.shape()[0] != len {
            return Err(Error::ShapeMismatch {
                op: "ssm_scan",
                lhs: x.shape().to_vec(),
                rhs: a_bar.shape().to_vec(),
            });
        }
    }
    let mut h = match h0 {
        Some(h0) if h0.shape() != [dch, n] => {
            return Err(Error::ShapeMismatch {
                op: "ssm_scan",
                lhs: h0.shape().to_vec(),
                rhs: vec![dch, n],
            })
        }
        Some(h0) => h0.data().to_vec(),
        None => vec![T::zero(); dch * n],
    };
    let mut y = vec![T::zero(); len * dch];
    let mut states = Vec::with_capacity(len * dch * n);
    let xv = x.data();
    for t in 0..len {
        let (ab, bb, c): (&[T], &[T], &[T]) = match d {
            DiscreteSsm::Lti { a_bar, b_bar, c } => (a_bar.data(), b_bar.data(), c.data()),
            DiscreteSsm::Selective { a_bar, b_bar, c } => (
                &a_bar.data()[t * dch * n..(t + 1) * dch * n],
                &b_bar.data()[t * dch * n..(t + 1) * dch * n],
                &c.data()[t * n..(t + 1) * n],
            ),
        };
        let shared_c = matches!(d, DiscreteSsm::Selective { .. });
        for ch in 0..dch {
            let xt = xv[t * dch + ch];
            let mut acc = T::zero();
            for s in 0..n {
                let i = ch * n + s;
                h[i] = ab[i] * h[i] + bb[i] * xt;
                acc += if shared_c { c[s] } else { c[i] } * h[i];
            }
            y[t * dch + ch] = acc;
        }
        states.extend_from_slice(&h);
    }
    Ok(ScanOutput {
        y: Tensor::new(vec![len, dch], y)?,
        states: Tensor::new(vec![len, dch, n], states)?,
    })
}

/// `K̄ = (C B̄, C Ā B̄, …, C Ā^{M-1} B̄)` per channel; LTI only.
pub fn ssm_conv_kernel<T: Scalar>(d: &DiscreteSsm<T>, m: usize) -> Result<ConvKernel<T>> {
    let DiscreteSsm::Lti { a_bar, b_bar, c } = d else {
        return Err(Error::InvalidArgument(
            "global convolution requires time-invariant parameters".into(),
        ));
    };
    if m == 0 {
        return Err(Error::InvalidArgument("kernel length must be >= 1".into()));
    }
    let (dch, n) = (d.channels(), d.state_size());
    let mut k = vec![T::zero(); m * dch];
    for ch in 0..dch {
        for s in 0..n {
            let i = ch * n + s;
            let mut power = c.data()[i] * b_bar.data()[i];
            for step in 0..m {
                k[step * dch + ch] += power;
                power *= a_bar.data()[i];
            }
        }
    }
    Ok(ConvKernel {
        k: Tensor::new(vec![m, dch], k)?,
    })
}

/// Causal convolution `y_t = Σ_{m=0}^{t} K̄[m] x_{t-m}`.
pub fn ssm_conv_apply<T: Scalar>(k: &ConvKernel<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.shape() != k.k.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssm_conv_apply",
            lhs: k.k.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let (len, dch) = (x.shape()[0], x.shape()[1]);
    let (kv, xv) = (k.k.data(), x.data());
    let mut y = vec![T::zero(); len * dch];
    for t in 0..len {
        for m in 0..=t {
            for ch in 0..dch {
                y[t * dch + ch] += kv[m * dch + ch] * xv[(t - m) * dch + ch];
            }
        }
    }
    Tensor::new(vec![len, dch], y)
}

/// Per-timestep `(Δ, B, C)` produced from the input sequence.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveParams {
    /// `[L, D]`, strictly positive
    pub delta: Var,
    /// `[L, N]`
    pub b: Var,
    /// `[L, N]`
    pub c: Var,
}

/// Input-dependent SSM parameters for `x: [L, D]`.
///
/// Weights follow the `[out, in]` convention: `proj_b, proj_c: [N, D]`,
/// `proj_delta: [1, D]`, `delta_bias: [D]`.
/// `Δ_t = softplus(x_t · proj_delta + delta_bias)`.
pub fn selective_params<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    proj_b: Var,
    proj_c: Var,
    proj_delta: Var,
    delta_bias: Var,
) -> Result<SelectiveParams> {
    let b = g.linear(x, proj_b, None)?;
    let c = g.linear(x, proj_c, None)?;
    let raw = g.linear(x, proj_delta, None)?;
    let shifted = g.add(raw, delta_bias)?;
    let delta = g.softplus(shifted);
    Ok(SelectiveParams { delta, b, c })
}

/// Differentiable selective scan with exact ZOH discretization inside.
///
/// `x: [L, D]`, `delta: [L, D]`, `a: [D, N]`, `b, c: [L, N]`; returns `[L, D]`.
/// Starts from a zero state.
pub fn selective_scan<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    delta: Var,
    a: Var,
    b: Var,
    c: Var,
) -> Result<Var> {
    let (len, dch) = match g.shape(x) {
        [l, d] => (*l, *d),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "selective_scan expects x: [L, D]".into(),
            })
        }
    };
    let n = g.shape(a).get(1).copied().unwrap_or(0);
    let expect = [
        (delta, vec![len, dch]),
        (a, vec![dch, n]),
        (b, vec![len, n]),
        (c, vec![len, n]),
    ];
    for (v, shape) in expect {
        if g.shape(v) != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "selective_scan",
                lhs: shape,
                rhs: g.shape(v).to_vec(),
            });
        }
    }
    if let Some(bad) = g.data(delta).iter().find(|d| !(**d > T::zero())) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {bad}")));
    }
    let (xv, dv, av, bv, cv) = (g.data(x), g.data(delta), g.data(a), g.data(b), g.data(c));
    let mut h = vec![T::zero(); dch * n];
    let mut states = Vec::with_capacity(len * dch * n);
    let mut y = vec![T::zero(); len * dch];
    for t in 0..len {
        for ch in 0..dch {
            let xt = xv[t * dch + ch];
            let dt = dv[t * dch + ch];
            let mut acc = T::zero();
            for s in 0..n {
                let i = ch * n + s;
                let (ab, coef) = zoh_coefficients(av[i], dt);
                h[i] = ab * h[i] + coef * bv[t * n + s] * xt;
                acc += cv[t * n + s] * h[i];
            }
            y[t * dch + ch] = acc;
        }
        states.extend_from_slice(&h);
    }
    let out = Tensor::new(vec![len, dch], y)?;
    let op = SelectiveScanOp { states, len, dch, n };
    Ok(g.custom(&[x, delta, a, b, c], out, Box::new(op)))
}

struct SelectiveScanOp<T> {
    states: Vec<T>,
    len: usize,
    dch: usize,
    n: usize,
}

impl<T: Scalar> CustomOp<T> for SelectiveScanOp<T> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, gy: &[T]) -> Vec<Option<Vec<T>>> {
        let (len, dch, n) = (self.len, self.dch, self.n);
        let (xv, dv, av, bv, cv) = (
            inputs[0].data(),
            inputs[1].data(),
            inputs[2].data(),
            inputs[3].data(),
            inputs[4].data(),
        );
        let mut gx = vec![T::zero(); len * dch];
        let mut gd = vec![T::zero(); len * dch];
        let mut ga = vec![T::zero(); dch * n];
        let mut gb = vec![T::zero(); len * n];
        let mut gc = vec![T::zero(); len * n];
        // dL/dh_t flowing back from step t+1
        let mut carry = vec![T::zero(); dch * n];
        for t in (0..len).rev() {
            let h_t = &self.states[t * dch * n..(t + 1) * dch * n];
            let h_prev = (t > 0).then(|| &self.states[(t - 1) * dch * n..t * dch * n]);
            for ch in 0..dch {
                let gyt = gy[t * dch + ch];
                let xt = xv[t * dch + ch];
                let dt = dv[t * dch + ch];
                let mut gdt = T::zero();
                let mut gxt = T::zero();
                for s in 0..n {
                    let i = ch * n + s;
                    let a = av[i];
                    let (ab, coef) = zoh_coefficients(a, dt);
                    let bts = bv[t * n + s];
                    let dh = gyt * cv[t * n + s] + carry[i];
                    gc[t * n + s] += gyt * h_t[i];
                    let hp = h_prev.map_or(T::zero(), |hp| hp[i]);
                    // h = ab * hp + coef * b * x
                    let g_ab = dh * hp;
                    let g_coef = dh * bts * xt;
                    gxt += dh * coef * bts;
                    gb[t * n + s] += dh * coef * xt;
                    // ab = exp(Δa), coef = expm1(Δa)/a
                    gdt += g_ab * ab * a + g_coef * ab;
                    ga[i] += g_ab * ab * dt + g_coef * zoh_coef_da(a, dt, ab);
                    carry[i] = dh * ab;
                }
                gx[t * dch + ch] = gxt;
                gd[t * dch + ch] = gdt;
            }
        }
        vec![Some(gx), Some(gd), Some(ga), Some(gb), Some(gc)]
    }
}
