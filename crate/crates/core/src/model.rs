//! The full classifier: embeddings → BiLSTM → (SynGCN ∥ MambaFormer) →
//! fusion → pooling → softmax.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::config::{ModelConfig, PoolMode};
use crate::data::Batch;
use crate::encoder::{bilstm, embed, EmbeddingTables, LstmParams};
use crate::error::{Error, Result};
use crate::fusion::{gated_fuse, kan_gate, logits, mean_pool, predict, ClassifierParams, KanGateParams, Prediction};
use crate::kan::BSplineGrid;
use crate::mambaformer::{mambaformer_stack, LayerParams, LayerSettings, LayerVars};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::syngcn::{normalize_adjacency, syngcn_forward, AdjacencySource, GcnLayerParams, SynAdjacency};

/// How the two channels are merged.
#[derive(Clone, Copy, Debug)]
pub enum FusionParams {
    KanGate { syn: KanGateParams, sem: KanGateParams },
    /// Linear merge of `[H_syn ∥ H_sem]`: weight `[D, 2D]`, bias `[D]`.
    Dense { weight: ParamId, bias: ParamId },
    /// No syntax branch; `H^c = H^sem`.
    SemanticOnly,
}

/// Parameter ids of every component.
#[derive(Clone, Debug)]
pub struct Layout {
    pub embed: EmbeddingTables,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub gcn: Vec<GcnLayerParams>,
    pub semantic: Vec<LayerParams>,
    pub fusion: FusionParams,
    pub classifier: ClassifierParams,
}

#[derive(Clone, Debug)]
pub struct MambaForGcn<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
    grid: BSplineGrid<T>,
}

/// Graph handles produced by a batch forward pass.
pub struct BatchForward {
    /// Mean cross-entropy over the batch.
    pub loss: Var,
    /// One `[1, C]` logit row per sample.
    pub logits: Vec<Var>,
}

impl<T: Scalar> MambaForGcn<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab_size: usize, tag_vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 || tag_vocab_size < 2 {
            return Err(Error::Config("vocabularies need at least PAD and UNK".into()));
        }
        let cfg = &config;
        let mut store = ParamStore::new();
        let d = cfg.model_dim();
        let embed = EmbeddingTables::new(&mut store, vocab_size, tag_vocab_size, cfg, rng);
        let lstm_fwd = LstmParams::new(&mut store, "lstm.fwd", cfg.input_dim(), cfg.lstm_hidden, cfg.init_range, rng);
        let lstm_bwd = LstmParams::new(&mut store, "lstm.bwd", cfg.input_dim(), cfg.lstm_hidden, cfg.init_range, rng);
        let v = cfg.variant;
        let gcn = if v.uses_syntax() {
            (0..cfg.gcn_layers)
                .map(|l| GcnLayerParams::new(&mut store, &format!("gcn.{l}"), d, cfg.init_range, rng))
                .collect()
        } else {
            Vec::new()
        };
        let semantic = (0..cfg.mambaformer_layers)
            .map(|l| LayerParams::new(&mut store, &format!("sem.{l}"), cfg, rng))
            .collect();
        let fusion = if !v.uses_syntax() {
            FusionParams::SemanticOnly
        } else if v.uses_kan_gate() {
            FusionParams::KanGate {
                syn: KanGateParams::new(&mut store, "fusion.gate_syn", cfg, rng),
                sem: KanGateParams::new(&mut store, "fusion.gate_sem", cfg, rng),
            }
        } else {
            let u = Init::Uniform(cfg.init_range);
            FusionParams::Dense {
                weight: store.init("fusion.dense.weight", &[d, 2 * d], u, rng),
                bias: store.init("fusion.dense.bias", &[d], u, rng),
            }
        };
        let classifier = ClassifierParams::new(&mut store, cfg, rng);
        let grid = BSplineGrid::uniform(cfg.kan_grid_size, cfg.kan_degree, T::lit(-cfg.kan_range), T::lit(cfg.kan_range))?;
        Ok(Self {
            layout: Layout {
                embed,
                lstm_fwd,
                lstm_bwd,
                gcn,
                semantic,
                fusion,
                classifier,
            },
            params: store,
            config,
            grid,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn vocab_size(&self) -> usize {
        self.params.get(self.layout.embed.word).shape()[0]
    }

    pub fn tag_vocab_size(&self) -> usize {
        self.params.get(self.layout.embed.postag).shape()[0]
    }

    /// Logits `[1, C]` for sample `b` of `batch`. Padding is cut off before
    /// the forward pass.
    pub fn sample_logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &Batch,
        b: usize,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let n = batch.lengths[b];
        if n == 0 {
            return Err(Error::Data(format!("sample {} has no tokens", batch.ids[b])));
        }
        if n > cfg.max_len {
            return Err(Error::Data(format!(
                "sample {} has {n} tokens, more than max_len {}",
                batch.ids[b], cfg.max_len
            )));
        }
        let lay = &self.layout;
        let x = embed(
            g,
            bound[lay.embed.word],
            bound[lay.embed.position],
            bound[lay.embed.postag],
            &batch.token_ids[b][..n],
            &batch.position_ids[b][..n],
            &batch.postag_ids[b][..n],
        )?;
        let x = g.dropout(x, cfg.dropout.embed, rng.as_deref_mut())?;
        let h = bilstm(g, x, lay.lstm_fwd.vars(bound), lay.lstm_bwd.vars(bound))?;

        let real = vec![true; n];
        let settings = LayerSettings {
            heads: cfg.heads,
            attn_dropout: cfg.dropout.attn,
            eps: cfg.layer_norm_eps,
        };
        let layers: Vec<LayerVars> = lay.semantic.iter().map(|l| l.vars(bound)).collect();
        let h_sem = mambaformer_stack(g, h, &layers, settings, &real, rng.as_deref_mut())?;

        let h_c = match lay.fusion {
            FusionParams::SemanticOnly => h_sem,
            _ => {
                let full = &batch.adjacency[b];
                let lm = batch.max_len;
                let mut raw = Vec::with_capacity(n * n);
                for i in 0..n {
                    raw.extend(full.data()[i * lm..i * lm + n].iter().map(|&v| T::lit(v)));
                }
                let source = if batch.has_adjacency[b] {
                    AdjacencySource::ParserProbability
                } else {
                    AdjacencySource::Identity
                };
                let adj = normalize_adjacency(&SynAdjacency::new(Tensor::new(vec![n, n], raw)?, source)?, None)?;
                let a = g.constant(adj.matrix);
                let gcn: Vec<(Var, Var)> = lay.gcn.iter().map(|p| p.vars(bound)).collect();
                let h_syn = syngcn_forward(g, h, a, &gcn, cfg.dropout.gcn, rng)?;
                match lay.fusion {
                    FusionParams::KanGate { syn, sem } => {
                        let gs = kan_gate(g, h_syn, bound[syn.coeffs], syn.base.map(|p| bound[p]), &self.grid)?;
                        let gm = kan_gate(g, h_sem, bound[sem.coeffs], sem.base.map(|p| bound[p]), &self.grid)?;
                        gated_fuse(g, h_syn, h_sem, gs, gm)?
                    }
                    FusionParams::Dense { weight, bias } => {
                        let cat = g.concat(&[h_syn, h_sem], 1)?;
                        g.linear(cat, bound[weight], Some(bound[bias]))?
                    }
                    FusionParams::SemanticOnly => unreachable!(),
                }
            }
        };
        let pooled = match cfg.pool {
            PoolMode::Aspect => mean_pool(g, h_c, &batch.aspect_mask[b][..n])?,
            PoolMode::Full => mean_pool(g, h_c, &real)?,
        };
        let (w, bias) = lay.classifier.vars(bound);
        logits(g, pooled, w, bias)
    }

    /// Mean cross-entropy over every sample of `batch`.
    pub fn batch_forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &Batch,
        mut rng: Option<&mut R>,
    ) -> Result<BatchForward> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut total: Option<Var> = None;
        for b in 0..batch.len() {
            let z = self.sample_logits(g, bound, batch, b, rng.as_deref_mut())?;
            let ce = g.cross_entropy(z, batch.labels[b])?;
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
            rows.push(z);
        }
        let loss = g.scale(total.expect("non-empty batch"), T::one() / T::of_usize(batch.len()));
        Ok(BatchForward { loss, logits: rows })
    }

    /// Inference: no dropout, no gradients.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        (0..batch.len())
            .map(|b| {
                let z = self.sample_logits::<rand_chacha::ChaCha8Rng>(&mut g, &bound, batch, b, None)?;
                Ok(predict(&g.data(z).iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
            })
            .collect()
    }

    /// Inference logits, one row per sample.
    pub fn logits_batch(&self, batch: &Batch) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        (0..batch.len())
            .map(|b| {
                let z = self.sample_logits::<rand_chacha::ChaCha8Rng>(&mut g, &bound, batch, b, None)?;
                Ok(g.data(z).to_vec())
            })
            .collect()
    }
}
