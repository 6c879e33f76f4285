//! Token embeddings and the bidirectional LSTM encoder.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Word, position and POS tables. Row 0 of each is padding, frozen at zero.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub position: ParamId,
    pub postag: ParamId,
}

impl EmbeddingTables {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vocab_size: usize,
        tag_vocab_size: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let word = Init::Normal(cfg.word_init_std).sample(&[vocab_size, cfg.word_dim], rng);
        let position = Init::Uniform(cfg.init_range).sample(&[cfg.max_len + 1, cfg.position_dim], rng);
        let postag = Init::Uniform(cfg.init_range).sample(&[tag_vocab_size, cfg.postag_dim], rng);
        Self {
            word: store.add_with_frozen_rows("embed.word", word, vec![0]),
            position: store.add_with_frozen_rows("embed.position", position, vec![0]),
            postag: store.add_with_frozen_rows("embed.postag", postag, vec![0]),
        }
    }

    /// Overwrites word rows with pretrained vectors.
    pub fn load_word_vectors<T: Scalar>(&self, store: &mut ParamStore<T>, vectors: &[(usize, Vec<f64>)]) -> Result<()> {
        let table = store.get_mut(self.word);
        let dim = table.shape()[1];
        let rows = table.shape()[0];
        for (id, v) in vectors {
            if *id == 0 {
                continue;
            }
            if *id >= rows || v.len() != dim {
                return Err(Error::Data(format!("word vector for id {id} does not fit a {rows}x{dim} table")));
            }
            for (dst, &src) in table.data_mut()[id * dim..(id + 1) * dim].iter_mut().zip(v) {
                *dst = T::lit(src);
            }
        }
        Ok(())
    }
}

/// `[word ∥ position ∥ POS]` per token; all id slices must have equal length.
pub fn embed<T: Scalar>(
    g: &mut Graph<T>,
    word: Var,
    position: Var,
    postag: Var,
    tokens: &[usize],
    positions: &[usize],
    postags: &[usize],
) -> Result<Var> {
    if tokens.len() != positions.len() || tokens.len() != postags.len() {
        return Err(Error::InvalidArgument(format!(
            "embed: {} tokens, {} positions, {} tags",
            tokens.len(),
            positions.len(),
            postags.len()
        )));
    }
    let w = g.gather_rows(word, tokens)?;
    let p = g.gather_rows(position, positions)?;
    let t = g.gather_rows(postag, postags)?;
    g.concat(&[w, p, t], 1)
}

/// One LSTM direction: `w_ih: [4h, in]`, `w_hh: [4h, h]`, `bias: [4h]`,
/// gate order input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init_range: f64,
        rng: &mut R,
    ) -> Self {
        let init = Init::Uniform(init_range);
        Self {
            w_ih: store.init(format!("{prefix}.w_ih"), &[4 * hidden, input], init, rng),
            w_hh: store.init(format!("{prefix}.w_hh"), &[4 * hidden, hidden], init, rng),
            bias: store.init(format!("{prefix}.bias"), &[4 * hidden], init, rng),
        }
    }

    pub fn vars(&self, bound: &Bound) -> LstmVars {
        LstmVars {
            w_ih: bound[self.w_ih],
            w_hh: bound[self.w_hh],
            bias: bound[self.bias],
        }
    }
}

/// Runs one direction over `x: [L, in]`; returns `[L, h]` in input order.
pub fn lstm_direction<T: Scalar>(g: &mut Graph<T>, x: Var, p: LstmVars, reverse: bool) -> Result<Var> {
    let len = g.shape(x)[0];
    let hidden = g.shape(p.w_hh)[1];
    if g.shape(p.w_hh)[0] != 4 * hidden {
        return Err(Error::InvalidShape {
            shape: g.shape(p.w_hh).to_vec(),
            reason: "w_hh must be [4h, h]".into(),
        });
    }
    let xp = g.linear(x, p.w_ih, Some(p.bias))?;
    let w_hh_t = g.transpose(p.w_hh)?;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = vec![None; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let row = g.slice(xp, 0, t, t + 1)?;
        let z = match h {
            Some(h) => {
                let rec = g.matmul(h, w_hh_t)?;
                g.add(row, rec)?
            }
            None => row,
        };
        let zi = g.slice(z, 1, 0, hidden)?;
        let zf = g.slice(z, 1, hidden, 2 * hidden)?;
        let zg = g.slice(z, 1, 2 * hidden, 3 * hidden)?;
        let zo = g.slice(z, 1, 3 * hidden, 4 * hidden)?;
        let i = g.sigmoid(zi);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let ic = g.mul(i, cand)?;
        let c_new = match c {
            Some(c) => {
                let f = g.sigmoid(zf);
                let fc = g.mul(f, c)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        outputs[t] = Some(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step visited")).collect();
    g.concat(&rows, 0)
}

/// Forward and backward passes concatenated per position: `[L, 2h]`.
pub fn bilstm<T: Scalar>(g: &mut Graph<T>, x: Var, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
    if g.shape(x).len() != 2 || g.shape(x)[0] == 0 {
        return Err(Error::InvalidShape {
            shape: g.shape(x).to_vec(),
            reason: "bilstm expects [L, in] with L >= 1".into(),
        });
    }
    let f = lstm_direction(g, x, fwd, false)?;
    let b = lstm_direction(g, x, bwd, true)?;
    g.concat(&[f, b], 1)
}

/// Rows `start..end` of `h`.
pub fn extract_aspect<T: Scalar>(g: &mut Graph<T>, h: Var, span: [usize; 2]) -> Result<Var> {
    let len = g.shape(h)[0];
    let [start, end] = span;
    if start >= end || end > len {
        return Err(Error::InvalidSpan { start, end, len });
    }
    g.slice(h, 0, start, end)
}

/// Constant `[L, in]` tensor helper used by tests and callers feeding raw
/// features directly.
pub fn constant_rows<T: Scalar>(g: &mut Graph<T>, rows: &[Vec<f64>]) -> Result<Var> {
    let t = Tensor::from_f64(&[rows.len(), rows.first().map_or(0, Vec::len)], &rows.concat())?;
    Ok(g.constant(t))
}
