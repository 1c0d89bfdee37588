//! Repeated split/train/block/score runs over one labeled dataset.

use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baselines::{key_block, minhash_block, KeySpec, MinHashParams};
use crate::blocking::{block, pe_ratio, CandidateSet};
use crate::data::{Dataset, LabelSet};
use crate::embedding::{EmbeddingConfig, EmbeddingTable};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::lsh::LshParams;
use crate::training::{train, TrainingConfig};

use super::{recall, split, MetricRow, SplitSpec};

/// A blocking method scored on each test side.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    AutoBlock {
        theta: f64,
    },
    Key(KeySpec),
    /// An empty attribute list means every schema attribute.
    MinHash {
        attributes: Vec<String>,
        theta: f64,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::AutoBlock { theta } => format!("autoblock({theta})"),
            Method::Key(k) => format!("key({k})"),
            Method::MinHash { attributes, theta } if attributes.is_empty() => format!("minhash(all,{theta})"),
            Method::MinHash { attributes, theta } => format!("minhash({},{theta})", attributes.join("|")),
        }
    }

    fn needs_model(&self) -> bool {
        matches!(self, Method::AutoBlock { .. })
    }
}

/// Parses the form produced by [`Method::name`]: `autoblock(0.8)`,
/// `key(title|artist)`, `minhash(all,0.4)` or `minhash(title|album,0.4)`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse method `{s}`"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?.trim();
        let theta = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        match &s[..open] {
            "autoblock" => Ok(Method::AutoBlock { theta: theta(inner)? }),
            "key" => Ok(Method::Key(inner.parse()?)),
            "minhash" => {
                let (attrs, t) = inner.rsplit_once(',').ok_or_else(bad)?;
                let attributes = match attrs.trim() {
                    "all" => Vec::new(),
                    list => list.split('|').map(|a| a.trim().to_owned()).collect(),
                };
                Ok(Method::MinHash {
                    attributes,
                    theta: theta(t)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub split: SplitSpec,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub lsh: LshParams,
    pub minhash: MinHashParams,
    #[serde(skip)]
    pub methods: Vec<Method>,
}

fn run_method(
    method: &Method,
    test: &Dataset,
    model: Option<&crate::model::SignatureModel>,
    cfg: &ExperimentConfig,
) -> Result<CandidateSet> {
    match method {
        Method::AutoBlock { theta } => block(test, model.expect("model trained for autoblock"), *theta, &cfg.lsh),
        Method::Key(k) => key_block(test, k),
        Method::MinHash { attributes, theta } => {
            let attrs: Vec<&str> = if attributes.is_empty() {
                test.schema().iter().map(String::as_str).collect()
            } else {
                attributes.iter().map(String::as_str).collect()
            };
            minhash_block(test, &attrs, *theta, &cfg.minhash)
        }
    }
}

/// One row per (repeat, method). Repeats run in order; each uses its own
/// split and a training seed derived from the repeat index.
pub fn run_experiment(
    dataset: &Dataset,
    labels: &LabelSet,
    dataset_name: &str,
    regime: &str,
    cfg: &ExperimentConfig,
) -> Result<Vec<MetricRow>> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("experiment has no methods".into()));
    }
    let splits = split(labels, dataset, &cfg.split)?;
    let mut rows = Vec::new();
    for (r, s) in splits.iter().enumerate() {
        let train_ds = dataset.subset(&s.train);
        let test_ds = dataset.subset(&s.test);
        if s.test_labels.is_empty() {
            return Err(Error::InvalidArgument(format!("repeat {r} has no test label pairs")));
        }
        let train_labels = LabelSet::from_pairs(s.train_labels.iter().cloned(), &train_ds)?;
        let test_labels = LabelSet::from_pairs(s.test_labels.iter().cloned(), &test_ds)?;
        let mut model = None;
        let mut train_time = 0.0;
        if cfg.methods.iter().any(Method::needs_model) {
            let seed = derive_seed(cfg.training.seed, r as u64);
            let training = TrainingConfig {
                seed,
                ..cfg.training.clone()
            };
            let start = Instant::now();
            let embedding = EmbeddingTable::new_random(cfg.embedding.clone(), derive_seed(seed, 0xE))?;
            model = Some(train(&train_ds, &train_labels, embedding, &cfg.encoder, &training)?);
            train_time = start.elapsed().as_secs_f64();
            info!("repeat {r}: trained in {train_time:.1}s");
        }
        for method in &cfg.methods {
            let start = Instant::now();
            let candidates = run_method(method, &test_ds, model.as_ref(), cfg)?;
            let mut wall = start.elapsed().as_secs_f64();
            if method.needs_model() {
                wall += train_time;
            }
            let row = MetricRow {
                method: method.name(),
                dataset: dataset_name.to_owned(),
                regime: regime.to_owned(),
                repeat: r,
                recall: recall(&candidates, &test_labels)?,
                pe_ratio: pe_ratio(&candidates, test_ds.n())?,
                wall_time_s: Some(wall),
            };
            info!(
                "repeat {r} {}: recall {:.4} pe {:.3} candidates {}",
                row.method,
                row.recall,
                row.pe_ratio,
                candidates.len()
            );
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{synthesize, Regime, SynthSpec};

    #[test]
    fn method_names() {
        assert_eq!(Method::AutoBlock { theta: 0.8 }.name(), "autoblock(0.8)");
        assert_eq!(Method::Key("title|artist".parse().unwrap()).name(), "key(title|artist)");
        assert_eq!(
            Method::MinHash {
                attributes: vec![],
                theta: 0.4
            }
            .name(),
            "minhash(all,0.4)"
        );
    }

    #[test]
    fn names_parse_back() {
        for name in [
            "autoblock(0.8)",
            "key(title)",
            "key(title+artist)",
            "minhash(all,0.4)",
            "minhash(title|album,0.6)",
        ] {
            assert_eq!(name.parse::<Method>().unwrap().name(), name);
        }
        assert!("autoblock".parse::<Method>().is_err());
        assert!("minhash(0.4)".parse::<Method>().is_err());
    }

    #[test]
    fn baseline_only_experiment_scores_every_repeat() {
        let (ds, labels) = synthesize(&SynthSpec::preset(Regime::Clean, 100), 1).unwrap();
        let cfg = ExperimentConfig {
            split: SplitSpec {
                repeats: 2,
                ..SplitSpec::default()
            },
            methods: vec![
                Method::Key("title".parse().unwrap()),
                Method::MinHash {
                    attributes: vec![],
                    theta: 0.4,
                },
            ],
            ..ExperimentConfig::default()
        };
        let rows = run_experiment(&ds, &labels, "synth", "clean", &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.recall)));
    }
}
