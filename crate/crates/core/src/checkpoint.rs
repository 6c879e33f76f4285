//! Versioned JSON checkpoints.
//!
//! A checkpoint holds the resolved config, both vocabularies, every
//! parameter keyed by its dotted path, the Adam moments, the epoch counter
//! and the positions of the shuffle and dropout random streams. Floats are
//! written in shortest round-trip form so a reload is bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::config::ModelConfig;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::MambaForGcn;
use crate::optim::AdamState;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "mambaforgcn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub t: u64,
    /// Same order as `params`.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Seed plus word positions of the two ChaCha streams, as decimal strings
/// (they are 128-bit).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub shuffle_word_pos: String,
    pub dropout_word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `"f32"` or `"f64"`.
    pub scalar: String,
    pub config: ModelConfig,
    pub words: Vocab,
    pub tags: Vocab,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSnapshot>,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngSnapshot,
}

fn scalar_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &MambaForGcn<T>,
        words: &Vocab,
        tags: &Vocab,
        adam: Option<&AdamState<T>>,
        epoch: usize,
        rng: RngSnapshot,
    ) -> Self {
        let to64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: scalar_name::<T>().into(),
            config: model.config.clone(),
            words: words.clone(),
            tags: tags.clone(),
            params: model
                .params
                .entries()
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    data: to64(e.value.data()),
                })
                .collect(),
            optimizer: adam.map(|a| OptimizerSnapshot {
                t: a.t,
                m: a.m.iter().map(|m| to64(m)).collect(),
                v: a.v.iter().map(|v| to64(v)).collect(),
            }),
            epoch,
            rng,
        }
    }

    /// Rebuilds the model; every stored tensor must match the architecture
    /// implied by the config and vocabularies.
    pub fn to_model<T: Scalar>(&self) -> Result<MambaForGcn<T>> {
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let mut model = MambaForGcn::<T>::new(self.config.clone(), self.words.len(), self.tags.len(), &mut dummy)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, architecture needs {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for nt in &self.params {
            let id = model
                .params
                .id(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {}", nt.name)))?;
            let t = Tensor::from_f64(&nt.shape, &nt.data).map_err(|e| Error::Checkpoint(format!("{}: {e}", nt.name)))?;
            model
                .params
                .set(id, t)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", nt.name)))?;
        }
        Ok(model)
    }

    pub fn adam_state<T: Scalar>(&self) -> Option<AdamState<T>> {
        let from64 = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        self.optimizer.as_ref().map(|o| AdamState {
            t: o.t,
            m: o.m.iter().map(|m| from64(m)).collect(),
            v: o.v.iter().map(|v| from64(v)).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint (format {:?})", path.display(), ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }
}
