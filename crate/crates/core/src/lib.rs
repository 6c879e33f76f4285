//! Aspect-based sentiment classification with a syntactic GCN branch, an
//! attention + selective state space branch and KAN-gated fusion, on a small
//! reverse-mode autodiff engine.
//!
//! Every numeric component is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar type for common use.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod kan;
pub mod mambaformer;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod ssm;
pub mod syngcn;
pub mod synth;
pub mod trainer;

pub use autograd::{finite_diff_check, CustomOp, Graph, GradCheckReport, Tensor, Var};
pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, PoolMode, Variant};
pub use error::{Error, Result};
pub use model::MambaForGcn;
pub use scalar::Scalar;
pub use trainer::{train, Trainer};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Model64 = MambaForGcn<f64>;
pub type Model32 = MambaForGcn<f32>;
pub type Trainer64 = Trainer<f64>;
pub type Trainer32 = Trainer<f32>;
