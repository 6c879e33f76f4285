//! Architecture and training hyperparameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooling scope for the fused representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Mean over the aspect span.
    #[default]
    Aspect,
    /// Mean over every non-pad token.
    Full,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspect" => Ok(Self::Aspect),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown pool mode {s:?} (expected aspect|full)"))),
        }
    }
}

/// Architecture variant. `Full` is the complete model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Semantic layers are Mamba blocks only.
    NoMha,
    /// Semantic layers are attention blocks only.
    NoMamba,
    /// Fusion by a fully connected layer over `[H_syn ∥ H_sem]`.
    NoKanGate,
    /// Mamba blocks only, no syntax branch.
    Mamba4absa,
    /// Attention + Mamba layers, no syntax branch.
    MambaformerOnly,
}

impl Variant {
    pub const ABLATIONS: [Variant; 5] = [
        Variant::NoMha,
        Variant::NoMamba,
        Variant::NoKanGate,
        Variant::Mamba4absa,
        Variant::MambaformerOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMha => "no_mha",
            Variant::NoMamba => "no_mamba",
            Variant::NoKanGate => "no_kan_gate",
            Variant::Mamba4absa => "mamba4absa",
            Variant::MambaformerOnly => "mambaformer_only",
        }
    }

    pub fn uses_mha(self) -> bool {
        !matches!(self, Variant::NoMha | Variant::Mamba4absa)
    }

    pub fn uses_mamba(self) -> bool {
        self != Variant::NoMamba
    }

    pub fn uses_syntax(self) -> bool {
        !matches!(self, Variant::Mamba4absa | Variant::MambaformerOnly)
    }

    pub fn uses_kan_gate(self) -> bool {
        self.uses_syntax() && self != Variant::NoKanGate
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [Variant::Full].into_iter().chain(Variant::ABLATIONS);
        for v in all {
            if v.name() == s {
                return Ok(v);
            }
        }
        Err(Error::Config(format!(
            "unknown variant {s:?} (expected one of full, no_mha, no_mamba, no_kan_gate, mamba4absa, mambaformer_only)"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dropouts {
    /// On the concatenated token embeddings, before the BiLSTM.
    pub embed: f64,
    /// Between SynGCN layers.
    pub gcn: f64,
    /// On attention weights.
    pub attn: f64,
}

impl Default for Dropouts {
    fn default() -> Self {
        Self {
            embed: 0.7,
            gcn: 0.1,
            attn: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub position_dim: usize,
    pub postag_dim: usize,
    /// Longest sentence the position table covers.
    pub max_len: usize,
    /// Per direction; the model width is `2 * lstm_hidden`.
    pub lstm_hidden: usize,
    pub gcn_layers: usize,
    pub mambaformer_layers: usize,
    pub heads: usize,
    pub ssm_state: usize,
    pub conv_width: usize,
    /// Mamba inner width is `mamba_expand * model_dim`.
    pub mamba_expand: usize,
    pub kan_grid_size: usize,
    pub kan_degree: usize,
    /// Spline grid covers `[-kan_range, kan_range]`.
    pub kan_range: f64,
    /// Adds `W · silu(x)` next to the spline sum in each gate KAN.
    pub kan_base_branch: bool,
    pub kan_init_std: f64,
    pub num_classes: usize,
    pub dropout: Dropouts,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pool: PoolMode,
    pub variant: Variant,
    /// Dense weights ~ U(-init_range, init_range).
    pub init_range: f64,
    pub word_init_std: f64,
    pub grad_clip: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            position_dim: 30,
            postag_dim: 30,
            max_len: 128,
            lstm_hidden: 50,
            gcn_layers: 2,
            mambaformer_layers: 2,
            heads: 4,
            ssm_state: 16,
            conv_width: 2,
            mamba_expand: 2,
            kan_grid_size: 5,
            kan_degree: 3,
            kan_range: 3.0,
            kan_base_branch: false,
            kan_init_std: 0.1,
            num_classes: 3,
            dropout: Dropouts::default(),
            lr: 0.002,
            batch_size: 16,
            epochs: 50,
            seed: 42,
            pool: PoolMode::Aspect,
            variant: Variant::Full,
            init_range: 0.1,
            word_init_std: 0.1,
            grad_clip: 5.0,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn model_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.position_dim + self.postag_dim
    }

    pub fn mamba_inner(&self) -> usize {
        self.mamba_expand * self.model_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("position_dim", self.position_dim),
            ("postag_dim", self.postag_dim),
            ("max_len", self.max_len),
            ("lstm_hidden", self.lstm_hidden),
            ("gcn_layers", self.gcn_layers),
            ("mambaformer_layers", self.mambaformer_layers),
            ("heads", self.heads),
            ("ssm_state", self.ssm_state),
            ("conv_width", self.conv_width),
            ("mamba_expand", self.mamba_expand),
            ("kan_grid_size", self.kan_grid_size),
            ("kan_degree", self.kan_degree),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !self.model_dim().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim(),
                self.heads
            )));
        }
        for (name, rate) in [
            ("dropout.embed", self.dropout.embed),
            ("dropout.gcn", self.dropout.gcn),
            ("dropout.attn", self.dropout.attn),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} = {rate} outside [0, 1)")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if !(self.lr >= 0.0) || !(self.kan_range > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("lr >= 0, kan_range > 0 and layer_norm_eps > 0 required".into()));
        }
        Ok(())
    }

    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Switches `config` to an ablation variant; only one at a time.
pub fn ablate(config: &ModelConfig, variant: Variant) -> Result<ModelConfig> {
    if config.variant != Variant::Full && config.variant != variant {
        return Err(Error::Config(format!(
            "conflicting ablations: config already uses {} and {variant} was requested",
            config.variant
        )));
    }
    let mut out = config.clone();
    out.variant = variant;
    Ok(out)
}
