//! Hashed character n-gram token embeddings with optional pretrained vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayViewMut1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::hash_str;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub bucket_count: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub hash_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            bucket_count: 1 << 16,
            min_n: 3,
            max_n: 5,
            hash_seed: 0x5151_b10c,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding.dim must be positive".into()));
        }
        if !self.bucket_count.is_power_of_two() {
            return Err(Error::Config(format!(
                "embedding.bucket_count must be a power of two, got {}",
                self.bucket_count
            )));
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return Err(Error::Config(format!(
                "embedding n-gram range ({}, {}) is invalid",
                self.min_n, self.max_n
            )));
        }
        Ok(())
    }
}

/// Character n-grams of `<token>` with lengths `min_n..=max_n`, followed by
/// the whole wrapped token unless it already appeared as an n-gram.
pub fn ngrams(token: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        if n > wrapped.len() {
            break;
        }
        out.extend(wrapped.windows(n).map(|w| w.iter().collect::<String>()));
    }
    let whole: String = wrapped.iter().collect();
    if !(min_n..=max_n).contains(&wrapped.len()) {
        out.push(whole);
    }
    out
}

/// How a token resolves to a vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKey {
    Pretrained(usize),
    /// Sorted bucket indices (with multiplicity) whose rows are summed.
    Buckets(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    config: EmbeddingConfig,
    rows: Array2<f64>,
    trainable: bool,
    pretrained_tokens: Vec<String>,
    pretrained_vectors: Array2<f64>,
    pretrained_index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Random table with rows uniform in `[-1/d, 1/d]`.
    pub fn new_random(config: EmbeddingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / config.dim as f64;
        let rows = Array2::from_shape_simple_fn((config.bucket_count, config.dim), || rng.random_range(-bound..=bound));
        Self::from_parts(config, rows, true, Vec::new(), Array2::zeros((0, 0)))
    }

    pub fn from_parts(
        config: EmbeddingConfig,
        rows: Array2<f64>,
        trainable: bool,
        pretrained_tokens: Vec<String>,
        pretrained_vectors: Array2<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if rows.dim() != (config.bucket_count, config.dim) {
            return Err(Error::Format(format!(
                "embedding rows have shape {:?}, expected ({}, {})",
                rows.dim(),
                config.bucket_count,
                config.dim
            )));
        }
        if !pretrained_tokens.is_empty() && pretrained_vectors.dim() != (pretrained_tokens.len(), config.dim) {
            return Err(Error::Format("pretrained vector block has the wrong shape".into()));
        }
        if rows.iter().chain(pretrained_vectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("embedding contains non-finite values".into()));
        }
        let pretrained_index = pretrained_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            config,
            rows,
            trainable,
            pretrained_tokens,
            pretrained_vectors,
            pretrained_index,
        })
    }

    /// Loads `token v1 .. vd` lines. A leading `count dim` header line (as
    /// written by common subword-vector tools) is skipped. Mapped tokens are
    /// frozen; out-of-vocabulary tokens fall back to hashed rows.
    pub fn load_pretrained(path: &Path, config: EmbeddingConfig, seed: u64) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut dim: Option<usize> = None;
        let mut seen = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let d = fields.len() - 1;
            if d == 0 {
                return Err(Error::MalformedRow {
                    path: path.to_owned(),
                    row: line_no,
                    msg: "token without vector".into(),
                });
            }
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::MalformedRow {
                        path: path.to_owned(),
                        row: line_no,
                        msg: format!("vector has dimension {d}, expected {expected}"),
                    })
                }
                _ => {}
            }
            let token = fields[0].to_owned();
            let parsed = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedRow {
                    path: path.to_owned(),
                    row: line_no,
                    msg: e.to_string(),
                })?;
            // later duplicates overwrite earlier ones
            if let Some(&idx) = seen.get(&token) {
                let start = idx * d;
                values[start..start + d].copy_from_slice(&parsed);
            } else {
                seen.insert(token.clone(), tokens.len());
                tokens.push(token);
                values.extend(parsed);
            }
        }
        let dim = dim.ok_or_else(|| Error::Format(format!("{}: no vectors", path.display())))?;
        let config = EmbeddingConfig { dim, ..config };
        let mut table = Self::new_random(config, seed)?;
        table.trainable = false;
        let vectors = Array2::from_shape_vec((tokens.len(), dim), values).expect("rows x dim values");
        table.pretrained_index = seen;
        table.pretrained_tokens = tokens;
        table.pretrained_vectors = vectors;
        Ok(table)
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn bucket_count(&self) -> usize {
        self.config.bucket_count
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row_mut(&mut self, bucket: u32) -> ArrayViewMut1<'_, f64> {
        self.rows.row_mut(bucket as usize)
    }

    pub fn pretrained_tokens(&self) -> &[String] {
        &self.pretrained_tokens
    }

    pub fn pretrained_vectors(&self) -> &Array2<f64> {
        &self.pretrained_vectors
    }

    pub fn bucket_of(&self, gram: &str) -> u32 {
        (hash_str(self.config.hash_seed, gram) & (self.config.bucket_count as u64 - 1)) as u32
    }

    /// Sorted bucket list of a token's n-grams.
    pub fn ngram_buckets(&self, token: &str) -> Vec<u32> {
        let mut b: Vec<u32> = ngrams(token, self.config.min_n, self.config.max_n)
            .iter()
            .map(|g| self.bucket_of(g))
            .collect();
        b.sort_unstable();
        b
    }

    pub fn token_key(&self, token: &str) -> TokenKey {
        match self.pretrained_index.get(token) {
            Some(&i) => TokenKey::Pretrained(i),
            None => TokenKey::Buckets(self.ngram_buckets(token)),
        }
    }

    pub fn vector_for_key(&self, key: &TokenKey) -> Array1<f64> {
        match key {
            TokenKey::Pretrained(i) => self.pretrained_vectors.row(*i).to_owned(),
            TokenKey::Buckets(b) => self.sum_buckets(b),
        }
    }

    /// Sum of the rows at `buckets`, accumulated in the given order.
    pub fn sum_buckets(&self, buckets: &[u32]) -> Array1<f64> {
        let mut v = Array1::zeros(self.config.dim);
        for &b in buckets {
            v += &self.rows.row(b as usize);
        }
        v
    }

    pub fn embed_token(&self, token: &str) -> Array1<f64> {
        self.vector_for_key(&self.token_key(token))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn ngram_examples() {
        assert_eq!(ngrams("ab", 3, 3), ["<ab", "ab>", "<ab>"]);
        assert_eq!(ngrams("a", 3, 3), ["<a>"]);
    }

    #[test]
    fn ngram_count_by_enumeration() {
        // "<dylan>" has 7 chars: windows of 3, 4, 5 give 5 + 4 + 3.
        let wrapped: Vec<char> = "<dylan>".chars().collect();
        let expected: usize = (3..=5).map(|n| wrapped.len() - n + 1).sum::<usize>() + 1;
        assert_eq!(expected, 13);
        assert_eq!(ngrams("dylan", 3, 5).len(), expected);
    }

    #[test]
    fn zero_rows_give_zero_vector() {
        let cfg = EmbeddingConfig {
            dim: 4,
            bucket_count: 16,
            ..Default::default()
        };
        let t = EmbeddingTable::from_parts(cfg, Array2::zeros((16, 4)), true, vec![], Array2::zeros((0, 0))).unwrap();
        assert_eq!(t.embed_token("anything"), Array1::<f64>::zeros(4));
    }

    #[test]
    fn random_rows_within_bounds() {
        let cfg = EmbeddingConfig {
            dim: 8,
            bucket_count: 64,
            ..Default::default()
        };
        let t = EmbeddingTable::new_random(cfg, 3).unwrap();
        assert!(t.rows().iter().all(|v| v.abs() <= 1.0 / 8.0));
    }

    #[test]
    fn rejects_bad_bucket_count() {
        let cfg = EmbeddingConfig {
            bucket_count: 100,
            ..Default::default()
        };
        assert!(EmbeddingTable::new_random(cfg, 0).is_err());
    }

    #[test]
    fn pretrained_passthrough_and_oov_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        let mut f = File::create(&p).unwrap();
        writeln!(f, "2 4").unwrap();
        writeln!(f, "jones 0.1 0.2 0.3 0.4").unwrap();
        writeln!(f, "bob -1 0 1 2.5").unwrap();
        drop(f);
        let t = EmbeddingTable::load_pretrained(&p, EmbeddingConfig::default(), 1).unwrap();
        assert_eq!(t.dim(), 4);
        assert_eq!(t.pretrained_tokens().len(), 2);
        assert!(!t.trainable());
        assert_eq!(t.embed_token("jones").to_vec(), vec![0.1, 0.2, 0.3, 0.4]);
        let oov = t.embed_token("dylan");
        assert_eq!(oov.len(), 4);
        assert!(oov.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pretrained_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        File::create(&empty).unwrap();
        let err = EmbeddingTable::load_pretrained(&empty, EmbeddingConfig::default(), 1).unwrap_err();
        assert!(err.to_string().contains("no vectors"));

        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "a 1 2 3\nb 1 2\n").unwrap();
        match EmbeddingTable::load_pretrained(&bad, EmbeddingConfig::default(), 1) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
