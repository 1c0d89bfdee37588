//! Run configuration: one TOML file with a section per stage. Command
//! line flags override file values, which override defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::MinHashParams;
use crate::data::{ingest_table, Dataset, InputFormat};
use crate::embedding::{EmbeddingConfig, EmbeddingTable};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{Method, SplitSpec, SynthSpec};
use crate::hashing::derive_seed;
use crate::lsh::theory::LshTheoryParams;
use crate::lsh::{padded_dim, LshParams};
use crate::training::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    #[serde(rename = "self")]
    SelfJoin,
    Bipartite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mode: Mode,
    /// The only table in self mode, the left table in bipartite mode.
    pub input: Option<PathBuf>,
    pub right: Option<PathBuf>,
    /// Inferred from the file extension when absent.
    pub format: Option<InputFormat>,
    pub id_column: String,
    /// Attributes to read; every non-id column when absent.
    pub schema: Option<Vec<String>>,
    pub labels: Option<PathBuf>,
    /// Whitespace-separated `token v1 .. vd` lines.
    pub pretrained: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SelfJoin,
            input: None,
            right: None,
            format: None,
            id_column: "id".into(),
            schema: None,
            labels: None,
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockingConfig {
    pub theta: f64,
    /// Looser similarity used only for the reported query-time exponent.
    pub theta_prime: f64,
    /// Per-query result cap; `max(1000, floor(sqrt(n)))` when absent.
    pub max_results: Option<usize>,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        Self {
            theta: 0.8,
            theta_prime: 0.4,
            max_results: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Method names such as `autoblock(0.8)`, `key(title|artist)`,
    /// `minhash(all,0.4)`.
    pub methods: Vec<String>,
    pub dataset_name: String,
    pub regime: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec!["autoblock(0.8)".into()],
            dataset_name: "data".into(),
            regime: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Threads for parallel sections; every core when absent.
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub blocking: BlockingConfig,
    pub lsh: LshParams,
    pub minhash: MinHashParams,
    pub split: SplitSpec,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.data.mode == Mode::Bipartite && self.data.right.is_none() {
            return Err(Error::Config("data.right is required in bipartite mode".into()));
        }
        if self.data.mode == Mode::SelfJoin && self.data.right.is_some() {
            return Err(Error::Config("data.right is set but data.mode is `self`".into()));
        }
        self.embedding.validate()?;
        self.encoder.validate()?;
        self.training.validate()?;
        LshTheoryParams::new(self.blocking.theta, self.blocking.theta_prime)
            .map_err(|e| Error::Config(format!("blocking: {e}")))?;
        if self.blocking.max_results == Some(0) {
            return Err(Error::Config("blocking.max_results must be positive".into()));
        }
        self.lsh.validate(padded_dim(self.embedding.dim))?;
        if self.minhash.bands == 0 || self.minhash.rows_per_band == 0 || self.minhash.ngram_n == 0 {
            return Err(Error::Config(
                "minhash bands, rows_per_band and ngram_n must be positive".into(),
            ));
        }
        self.split.validate()?;
        self.synth.validate()?;
        self.methods()?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.eval.methods.iter().map(|m| m.parse()).collect()
    }

    /// Reads the configured table(s).
    pub fn load_dataset(&self) -> Result<Dataset> {
        let input = self
            .data
            .input
            .as_deref()
            .ok_or_else(|| Error::Config("data.input is not set".into()))?;
        let left = self.read_table(input, self.data.schema.as_deref())?;
        match &self.data.right {
            None => Dataset::self_join(left.0, left.1),
            Some(right) => {
                let right = self.read_table(right, Some(&left.0))?;
                Dataset::bipartite(left.0, left.1, right.1)
            }
        }
    }

    fn read_table(&self, path: &Path, schema: Option<&[String]>) -> Result<(Vec<String>, Vec<crate::data::Tuple>)> {
        let format = match self.data.format {
            Some(f) => f,
            None => InputFormat::from_path(path).ok_or_else(|| {
                Error::Config(format!(
                    "cannot infer the format of {}; set data.format",
                    path.display()
                ))
            })?,
        };
        ingest_table(path, format, schema, &self.data.id_column)
    }

    /// The initial token table: pretrained vectors when configured,
    /// otherwise random rows seeded from the training seed.
    pub fn initial_embedding(&self) -> Result<EmbeddingTable> {
        let seed = derive_seed(self.training.seed, 0xE);
        match &self.data.pretrained {
            Some(p) => EmbeddingTable::load_pretrained(p, self.embedding.clone(), seed),
            None => EmbeddingTable::new_random(self.embedding.clone(), seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::from_toml(
            "workers = 2\n[training]\nmax_iterations = 5\n[blocking]\ntheta = 0.9\n[data]\nmode = \"bipartite\"\nright = \"b.csv\"\n",
        )
        .unwrap();
        assert_eq!(c.training.max_iterations, 5);
        assert_eq!(c.training.batch_size, TrainingConfig::default().batch_size);
        assert_eq!(c.blocking.theta, 0.9);
        assert_eq!(c.data.mode, Mode::Bipartite);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let e = RunConfig::from_toml("[training]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rat"), "{e}");
        let c = RunConfig::from_toml("[training]\nlearning_rate = -1.0\n").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("learning_rate"));
        let c = RunConfig::from_toml("[blocking]\ntheta = 0.3\n").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[eval]\nmethods = [\"nope\"]\n").unwrap();
        assert!(c.validate().is_err());
    }
}
