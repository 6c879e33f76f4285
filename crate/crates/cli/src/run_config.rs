use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mambaforgcn::ModelConfig;
use serde::{Deserialize, Serialize};

/// Input files and output directory of a run. Relative paths resolve
/// against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Plain-text vectors, one `token v1 … vN` line per word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<PathBuf>,
    /// CoNLL-U parses parallel to each split; they fill in missing
    /// adjacency and POS tags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_conllu: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_conllu: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_conllu: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.out_dir);
        for p in [
            &mut self.dev,
            &mut self.test,
            &mut self.word_vectors,
            &mut self.train_conllu,
            &mut self.dev_conllu,
            &mut self.test_conllu,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}
