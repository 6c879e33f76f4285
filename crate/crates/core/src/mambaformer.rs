//! Semantic channel: multi-head self-attention followed by a Mamba block,
//! merged with a residual layer norm.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::ssm::{selective_params, selective_scan};

/// Additive logit offset on padded keys.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
pub struct MhaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct MhaVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl MhaParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dim: usize, init_range: f64, rng: &mut R) -> Self {
        let u = Init::Uniform(init_range);
        Self {
            w_q: store.init(format!("{prefix}.w_q"), &[dim, dim], u, rng),
            w_k: store.init(format!("{prefix}.w_k"), &[dim, dim], u, rng),
            w_v: store.init(format!("{prefix}.w_v"), &[dim, dim], u, rng),
            gamma: store.init(format!("{prefix}.norm.gamma"), &[dim], Init::Constant(1.0), rng),
            beta: store.init(format!("{prefix}.norm.beta"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn vars(&self, b: &Bound) -> MhaVars {
        MhaVars {
            w_q: b[self.w_q],
            w_k: b[self.w_k],
            w_v: b[self.w_v],
            gamma: b[self.gamma],
            beta: b[self.beta],
        }
    }
}

/// Attention output plus the per-head attention matrices `[L, L]`.
pub struct MhaOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// `LayerNorm(concat_h softmax(Q_h K_hᵀ / √d_k + Mask) V_h + H)`.
///
/// `pad_mask[j]` is true for real tokens; padded keys get a `-1e9` offset.
#[allow(clippy::too_many_arguments)]
pub fn mha_block<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    h: Var,
    p: &MhaVars,
    heads: usize,
    pad_mask: &[bool],
    attn_dropout: f64,
    eps: f64,
    mut rng: Option<&mut R>,
) -> Result<MhaOutput> {
    let (len, dim) = match g.shape(h) {
        [l, d] => (*l, *d),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "mha_block expects [L, D]".into(),
            })
        }
    };
    if heads == 0 || dim % heads != 0 {
        return Err(Error::InvalidArgument(format!("model dim {dim} not divisible by {heads} heads")));
    }
    if pad_mask.len() != len {
        return Err(Error::ShapeMismatch {
            op: "mha_block",
            lhs: vec![len],
            rhs: vec![pad_mask.len()],
        });
    }
    if !pad_mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("attention over an all-pad sequence".into()));
    }
    let dk = dim / heads;
    let q = g.linear(h, p.w_q, None)?;
    let k = g.linear(h, p.w_k, None)?;
    let v = g.linear(h, p.w_v, None)?;
    let mask = (!pad_mask.iter().all(|&m| m)).then(|| {
        let offsets: Vec<T> = pad_mask.iter().map(|&m| if m { T::zero() } else { T::lit(MASK_VALUE) }).collect();
        g.constant(Tensor::new(vec![1, len], offsets).expect("mask shape"))
    });
    let scale = T::one() / T::of_usize(dk).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for head in 0..heads {
        let (lo, hi) = (head * dk, (head + 1) * dk);
        let qh = g.slice(q, 1, lo, hi)?;
        let kh = g.slice(k, 1, lo, hi)?;
        let vh = g.slice(v, 1, lo, hi)?;
        let kt = g.transpose(kh)?;
        let raw = g.matmul(qh, kt)?;
        let mut scores = g.scale(raw, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let attn = g.softmax(scores, 1)?;
        attention.push(attn);
        let dropped = g.dropout(attn, attn_dropout, rng.as_deref_mut())?;
        outs.push(g.matmul(dropped, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    let res = g.add(cat, h)?;
    let output = g.layer_norm(res, p.gamma, p.beta, T::lit(eps))?;
    Ok(MhaOutput { output, attention })
}

#[derive(Clone, Copy, Debug)]
pub struct MambaBlockParams {
    /// Branch 1 input projection `[E, D]`.
    pub in_x: ParamId,
    /// Branch 2 (gate) input projection `[E, D]`.
    pub in_z: ParamId,
    /// Depthwise causal kernel `[W, E]` and its bias `[E]`.
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    /// `[N, E]`
    pub proj_b: ParamId,
    pub proj_c: ParamId,
    /// `[1, E]` and `[E]`
    pub proj_delta: ParamId,
    pub delta_bias: ParamId,
    /// `A = -exp(a_log)`, `[E, N]`.
    pub a_log: ParamId,
    /// Linear applied to the gated scan output, `[D, E]` and `[D]`.
    pub mid_w: ParamId,
    pub mid_b: ParamId,
    /// Output linear `[D, D]` and `[D]`.
    pub out_w: ParamId,
    pub out_b: ParamId,
    /// Residual norm after the block.
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct MambaVars {
    pub in_x: Var,
    pub in_z: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub proj_b: Var,
    pub proj_c: Var,
    pub proj_delta: Var,
    pub delta_bias: Var,
    pub a_log: Var,
    pub mid_w: Var,
    pub mid_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl MambaBlockParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (d, e, n) = (cfg.model_dim(), cfg.mamba_inner(), cfg.ssm_state);
        let u = Init::Uniform(cfg.init_range);
        let mut init = |name: &str, shape: &[usize], how: Init, rng: &mut R| store.init(format!("{prefix}.{name}"), shape, how, rng);
        let in_x = init("in_x", &[e, d], u, rng);
        let in_z = init("in_z", &[e, d], u, rng);
        let conv_w = init("conv.weight", &[cfg.conv_width, e], u, rng);
        let conv_b = init("conv.bias", &[e], u, rng);
        let proj_b = init("proj_b", &[n, e], u, rng);
        let proj_c = init("proj_c", &[n, e], u, rng);
        let proj_delta = init("proj_delta", &[1, e], u, rng);
        let delta_bias = init("delta_bias", &[e], Init::Zeros, rng);
        let a_log = init("a_log", &[e, n], Init::Zeros, rng);
        let mid_w = init("mid.weight", &[d, e], u, rng);
        let mid_b = init("mid.bias", &[d], u, rng);
        let out_w = init("out.weight", &[d, d], u, rng);
        let out_b = init("out.bias", &[d], u, rng);
        let gamma = init("norm.gamma", &[d], Init::Constant(1.0), rng);
        let beta = init("norm.beta", &[d], Init::Zeros, rng);

        // Δ initialized in [0.01, 0.1] (log-uniform) through the inverse softplus.
        let db: Vec<T> = (0..e)
            .map(|_| {
                let dt = (rng.gen_range(0.01f64.ln()..0.1f64.ln())).exp();
                T::lit(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        store.set(delta_bias, Tensor::new(vec![e], db).expect("shape")).expect("shape");
        let al: Vec<T> = (0..e * n).map(|i| T::lit(((i % n) as f64 + 1.0).ln())).collect();
        store.set(a_log, Tensor::new(vec![e, n], al).expect("shape")).expect("shape");

        Self {
            in_x,
            in_z,
            conv_w,
            conv_b,
            proj_b,
            proj_c,
            proj_delta,
            delta_bias,
            a_log,
            mid_w,
            mid_b,
            out_w,
            out_b,
            gamma,
            beta,
        }
    }

    pub fn vars(&self, b: &Bound) -> MambaVars {
        MambaVars {
            in_x: b[self.in_x],
            in_z: b[self.in_z],
            conv_w: b[self.conv_w],
            conv_b: b[self.conv_b],
            proj_b: b[self.proj_b],
            proj_c: b[self.proj_c],
            proj_delta: b[self.proj_delta],
            delta_bias: b[self.delta_bias],
            a_log: b[self.a_log],
            mid_w: b[self.mid_w],
            mid_b: b[self.mid_b],
            out_w: b[self.out_w],
            out_b: b[self.out_b],
            gamma: b[self.gamma],
            beta: b[self.beta],
        }
    }
}

/// Mamba block on `x: [L, D]`:
/// `u = SiLU(conv(x W_xᵀ))`, `y = scan(u) ⊙ SiLU(x W_zᵀ)`, then two linears.
pub fn mamba_block<T: Scalar>(g: &mut Graph<T>, x: Var, p: &MambaVars) -> Result<Var> {
    let xi = g.linear(x, p.in_x, None)?;
    let conv = g.conv1d_causal(xi, p.conv_w, p.conv_b)?;
    let u = g.silu(conv);
    let sp = selective_params(g, u, p.proj_b, p.proj_c, p.proj_delta, p.delta_bias)?;
    let ea = g.exp(p.a_log);
    let a = g.neg(ea);
    let y = selective_scan(g, u, sp.delta, a, sp.b, sp.c)?;
    let zi = g.linear(x, p.in_z, None)?;
    let z = g.silu(zi);
    let gated = g.mul(y, z)?;
    let mid = g.linear(gated, p.mid_w, Some(p.mid_b))?;
    g.linear(mid, p.out_w, Some(p.out_b))
}

/// One semantic layer's parameters; either half may be absent depending on
/// the variant.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    pub mha: Option<MhaParams>,
    pub mamba: Option<MambaBlockParams>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub mha: Option<MhaVars>,
    pub mamba: Option<MambaVars>,
}

impl LayerParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let v = cfg.variant;
        Self {
            mha: v
                .uses_mha()
                .then(|| MhaParams::new(store, &format!("{prefix}.mha"), cfg.model_dim(), cfg.init_range, rng)),
            mamba: v.uses_mamba().then(|| MambaBlockParams::new(store, &format!("{prefix}.mamba"), cfg, rng)),
        }
    }

    pub fn vars(&self, b: &Bound) -> LayerVars {
        LayerVars {
            mha: self.mha.map(|m| m.vars(b)),
            mamba: self.mamba.map(|m| m.vars(b)),
        }
    }
}

/// Knobs shared by every layer of the stack.
#[derive(Clone, Copy, Debug)]
pub struct LayerSettings {
    pub heads: usize,
    pub attn_dropout: f64,
    pub eps: f64,
}

/// `H^sem = LayerNorm(mamba(H^mha) + H^mha)` with `H^mha = mha(H)`.
/// Without attention the Mamba block reads `H` directly; without Mamba the
/// layer returns `H^mha`.
pub fn mambaformer_layer<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    h: Var,
    p: &LayerVars,
    settings: LayerSettings,
    pad_mask: &[bool],
    rng: Option<&mut R>,
) -> Result<Var> {
    let hm = match &p.mha {
        Some(mha) => mha_block(g, h, mha, settings.heads, pad_mask, settings.attn_dropout, settings.eps, rng)?.output,
        None => h,
    };
    match &p.mamba {
        Some(m) => {
            let mam = mamba_block(g, hm, m)?;
            let res = g.add(mam, hm)?;
            g.layer_norm(res, m.gamma, m.beta, T::lit(settings.eps))
        }
        None if p.mha.is_some() => Ok(hm),
        None => Err(Error::InvalidArgument("semantic layer with neither attention nor Mamba".into())),
    }
}

pub fn mambaformer_stack<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    h: Var,
    layers: &[LayerVars],
    settings: LayerSettings,
    pad_mask: &[bool],
    mut rng: Option<&mut R>,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("mambaformer needs at least one layer".into()));
    }
    let mut x = h;
    for l in layers {
        x = mambaformer_layer(g, x, l, settings, pad_mask, rng.as_deref_mut())?;
    }
    Ok(x)
}

/// Whether a variant keeps any semantic layers at all.
pub fn has_semantic_layers(v: Variant) -> bool {
    v.uses_mha() || v.uses_mamba()
}
