//! Training loop, evaluation and the layer-count sweep.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::{Checkpoint, RngSnapshot};
use crate::config::ModelConfig;
use crate::data::{build_postag_vocab, build_vocab, encode, load_word_vectors, make_batches, Encoded, Sample, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{metrics, Metrics};
use crate::model::MambaForGcn;
use crate::optim::{adam_step, check_finite, clip_global_norm, AdamConfig, AdamState};
use crate::scalar::Scalar;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// One line of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_macro_f1: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn restore_stream(seed: u64, id: u64, word_pos: &str) -> Result<ChaCha8Rng> {
    let mut r = stream(seed, id);
    let pos: u128 = word_pos
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad RNG position {word_pos:?}")))?;
    r.set_word_pos(pos);
    Ok(r)
}

/// Model, vocabularies, optimizer state and random streams of one run.
pub struct Trainer<T: Scalar> {
    pub model: MambaForGcn<T>,
    pub words: Vocab,
    pub tags: Vocab,
    pub adam: AdamState<T>,
    pub adam_config: AdamConfig,
    /// Completed epochs.
    pub epoch: usize,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    /// Builds vocabularies from `train` and initializes the model from
    /// `config.seed`. Pretrained vectors, when given, overwrite word rows.
    pub fn new(config: ModelConfig, train: &[Sample], word_vectors: Option<&Path>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let words = build_vocab(train);
        let tags = build_postag_vocab(train);
        let seed = config.seed;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MambaForGcn::<T>::new(config, words.len(), tags.len(), &mut init_rng)?;
        if let Some(path) = word_vectors {
            let found = load_word_vectors(path, &words, model.config.word_dim)?;
            log::info!("{}: {} of {} vocabulary words have vectors", path.display(), found.len(), words.len());
            model.layout.embed.load_word_vectors(&mut model.params, &found)?;
        }
        let adam = AdamState::new(&model.params);
        let adam_config = AdamConfig::with_lr(model.config.lr);
        Ok(Self {
            model,
            words,
            tags,
            adam,
            adam_config,
            epoch: 0,
            shuffle_rng: stream(seed, SHUFFLE_STREAM),
            dropout_rng: stream(seed, DROPOUT_STREAM),
        })
    }

    /// Resumes from a checkpoint, restoring optimizer moments and RNG streams.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.to_model::<T>()?;
        let adam = ck.adam_state::<T>().unwrap_or_else(|| AdamState::new(&model.params));
        if adam.m.len() != model.params.len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        Ok(Self {
            adam_config: AdamConfig::with_lr(model.config.lr),
            model,
            words: ck.words.clone(),
            tags: ck.tags.clone(),
            adam,
            epoch: ck.epoch,
            shuffle_rng: restore_stream(ck.rng.seed, SHUFFLE_STREAM, &ck.rng.shuffle_word_pos)?,
            dropout_rng: restore_stream(ck.rng.seed, DROPOUT_STREAM, &ck.rng.dropout_word_pos)?,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            &self.words,
            &self.tags,
            Some(&self.adam),
            self.epoch,
            RngSnapshot {
                seed: self.model.config.seed,
                shuffle_word_pos: self.shuffle_rng.get_word_pos().to_string(),
                dropout_word_pos: self.dropout_rng.get_word_pos().to_string(),
            },
        )
    }

    pub fn encode(&self, samples: &[Sample]) -> Vec<Encoded> {
        encode(samples, &self.words, &self.tags)
    }

    /// One pass over `train` in seeded random order. Returns the mean
    /// per-sample loss.
    pub fn train_epoch(&mut self, train: &[Encoded]) -> Result<f64> {
        let batches = make_batches(train, self.model.config.batch_size, Some(&mut self.shuffle_rng))?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let mut g = Graph::<T>::new();
            let bound = self.model.params.bind(&mut g);
            let out = self.model.batch_forward(&mut g, &bound, batch, Some(&mut self.dropout_rng))?;
            let loss = g.data(out.loss)[0].as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("epoch {} batch {bi}: loss is {loss}", self.epoch + 1)));
            }
            g.backward(out.loss)?;
            let mut grads = self.model.params.collect_grads(&g, &bound);
            check_finite(&self.model.params, &grads)
                .map_err(|e| Error::Diverged(format!("epoch {} batch {bi}: {e}", self.epoch + 1)))?;
            clip_global_norm(&mut grads, self.model.config.grad_clip);
            adam_step(&mut self.model.params, &grads, &mut self.adam, &self.adam_config)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        self.epoch += 1;
        Ok(total / count as f64)
    }

    pub fn evaluate(&self, samples: &[Encoded]) -> Result<Metrics> {
        evaluate_model(&self.model, samples)
    }
}

/// Inference-mode metrics over encoded samples.
pub fn evaluate_model<T: Scalar>(model: &MambaForGcn<T>, samples: &[Encoded]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let batches = make_batches::<ChaCha8Rng>(samples, model.config.batch_size.max(1), None)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut golds = Vec::with_capacity(samples.len());
    for batch in &batches {
        preds.extend(model.predict_batch(batch)?.into_iter().map(|p| p.label));
        golds.extend_from_slice(&batch.labels);
    }
    metrics(&preds, &golds, model.config.num_classes)
}

/// Loads a checkpoint's model and scores raw samples with its vocabularies.
pub fn evaluate_checkpoint<T: Scalar>(ck: &Checkpoint, samples: &[Sample]) -> Result<Metrics> {
    let model = ck.to_model::<T>()?;
    if model.vocab_size() != ck.words.len() || model.tag_vocab_size() != ck.tags.len() {
        return Err(Error::Checkpoint("vocabulary does not match the embedding tables".into()));
    }
    evaluate_model(&model, &encode(samples, &ck.words, &ck.tags))
}

pub struct TrainOutcome<T: Scalar> {
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) with the best dev accuracy, ties by macro-F1.
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub trainer: Trainer<T>,
}

/// Trains for `config.epochs` epochs, scoring `dev` after each (the training
/// set stands in when `dev` is empty). `on_epoch` sees every record as it
/// is produced.
pub fn train<T: Scalar>(
    config: ModelConfig,
    train_set: &[Sample],
    dev_set: &[Sample],
    word_vectors: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let epochs = config.epochs;
    if epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    let mut trainer = Trainer::<T>::new(config, train_set, word_vectors)?;
    let train_enc = trainer.encode(train_set);
    let dev_enc = if dev_set.is_empty() {
        log::warn!("no dev set; selecting the best epoch on the training set");
        train_enc.clone()
    } else {
        trainer.encode(dev_set)
    };
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, f64, usize, Checkpoint)> = None;
    for _ in 0..epochs {
        let started = Instant::now();
        let train_loss = trainer.train_epoch(&train_enc)?;
        let m = trainer.evaluate(&dev_enc)?;
        let rec = EpochRecord {
            epoch: trainer.epoch,
            train_loss,
            dev_acc: m.accuracy,
            dev_macro_f1: m.macro_f1,
        };
        log::info!(
            "epoch {} loss {:.4} dev acc {:.4} f1 {:.4} ({:.1}s)",
            rec.epoch,
            rec.train_loss,
            rec.dev_acc,
            rec.dev_macro_f1,
            started.elapsed().as_secs_f64()
        );
        on_epoch(&rec);
        let better = best
            .as_ref()
            .is_none_or(|(acc, f1, _, _)| (m.accuracy, m.macro_f1) > (*acc, *f1));
        if better {
            best = Some((m.accuracy, m.macro_f1, trainer.epoch, trainer.checkpoint()));
        }
        history.push(rec);
    }
    let (_, _, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best,
        trainer,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub best_epoch: usize,
    pub dev_acc: f64,
    pub dev_macro_f1: f64,
    pub seconds: f64,
}

/// Trains one model per layer count (GCN and MambaFormer depth set
/// together), all from the same seed.
pub fn layer_sweep<T: Scalar>(config: &ModelConfig, counts: &[usize], train_set: &[Sample], dev_set: &[Sample]) -> Result<Vec<SweepRow>> {
    if counts.contains(&0) {
        return Err(Error::Config("layer counts must be >= 1".into()));
    }
    counts
        .iter()
        .map(|&layers| {
            let cfg = ModelConfig {
                gcn_layers: layers,
                mambaformer_layers: layers,
                ..config.clone()
            };
            let started = Instant::now();
            let out = train::<T>(cfg, train_set, dev_set, None, |_| {})?;
            let best = &out.history[out.best_epoch - 1];
            Ok(SweepRow {
                layers,
                best_epoch: out.best_epoch,
                dev_acc: best.dev_acc,
                dev_macro_f1: best.dev_macro_f1,
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
