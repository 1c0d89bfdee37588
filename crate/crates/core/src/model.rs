//! Trained signature model and its binary model file.
//!
//! Layout (all integers and floats little-endian, floats 32-bit):
//!
//! ```text
//! magic        8 bytes  "SIGBLKMD"
//! version      u32      = 1
//! meta         u32 len + UTF-8 JSON (cell type, encoder/training/embedding config)
//! schema       u32 m, then m x (u32 len + UTF-8 name)
//! embedding    u32 dim, u32 buckets, u32 min_n, u32 max_n, u64 hash_seed,
//!              u8 trainable, buckets*dim f32 rows,
//!              u32 p, then p x (u32 len + token, dim f32)
//! encoders     m x (u32 hidden, u32 max_len, f32 rho,
//!                   forward GRU: w 3h*dim, u 3h*h, b_x 3h, b_h 3h,
//!                   backward GRU: same, attention 2h)
//! signatures   u32 S, u32 m, S*m f32 (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::data::Tuple;
use crate::embedding::{EmbeddingConfig, EmbeddingTable};
use crate::encoder::{AttentionalEncoder, EncoderConfig, EncoderParams, GruParams};
use crate::error::{Error, Result};
use crate::signatures::{compute_signature, max_cosine, SignatureWeights};
use crate::training::TrainingConfig;

pub const MODEL_MAGIC: &[u8; 8] = b"SIGBLKMD";
pub const MODEL_VERSION: u32 = 1;

/// Configuration snapshot stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Recurrent cell used by the sequence encoder.
    pub cell: String,
    pub encoder: EncoderConfig,
    pub training: TrainingConfig,
    pub embedding: EmbeddingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureModel {
    pub schema: Vec<String>,
    pub embedding: EmbeddingTable,
    pub encoders: Vec<AttentionalEncoder>,
    pub weights: SignatureWeights,
    pub meta: ModelMeta,
}

impl SignatureModel {
    pub fn signature_count(&self) -> usize {
        self.weights.count()
    }

    pub fn attribute_embeddings(&self, tuple: &Tuple) -> Vec<Option<Array1<f64>>> {
        self.encoders
            .iter()
            .zip(&tuple.attributes)
            .map(|(enc, value)| enc.encode_attribute(&self.embedding, value))
            .collect()
    }

    pub fn signatures(&self, tuple: &Tuple) -> Vec<Option<Array1<f64>>> {
        let g = self.attribute_embeddings(tuple);
        (0..self.weights.count())
            .map(|s| compute_signature(self.weights.row(s), &g))
            .collect()
    }

    /// Max over signatures of the per-signature cosine.
    pub fn tuple_similarity(&self, x: &Tuple, y: &Tuple) -> f64 {
        max_cosine(&self.signatures(x), &self.signatures(y))
    }

    /// Lists attribute differences against `schema`; empty when equal.
    pub fn schema_diff(&self, schema: &[String]) -> Vec<String> {
        let mut diffs = Vec::new();
        for a in &self.schema {
            if !schema.contains(a) {
                diffs.push(format!("-{a} (in model, not in data)"));
            }
        }
        for a in schema {
            if !self.schema.contains(a) {
                diffs.push(format!("+{a} (in data, not in model)"));
            }
        }
        if diffs.is_empty() && self.schema != schema {
            diffs.push(format!(
                "attribute order differs: model [{}], data [{}]",
                self.schema.join(","),
                schema.join(",")
            ));
        }
        diffs
    }

    /// Rounds every parameter to the precision of the model file, so an
    /// in-memory model behaves exactly like its saved-and-loaded copy.
    pub fn round_to_file_precision(&mut self) {
        let round = |x: &mut f64| *x = f64::from(*x as f32);
        let cfg = self.embedding.config().clone();
        let trainable = self.embedding.trainable();
        let mut rows = self.embedding.rows().clone();
        rows.iter_mut().for_each(round);
        let mut pre = self.embedding.pretrained_vectors().clone();
        pre.iter_mut().for_each(round);
        let tokens = self.embedding.pretrained_tokens().to_vec();
        self.embedding = EmbeddingTable::from_parts(cfg, rows, trainable, tokens, pre).expect("same shapes");
        for enc in &mut self.encoders {
            for s in enc.params.slices_mut() {
                s.iter_mut().for_each(round);
            }
            enc.rho = f64::from(enc.rho as f32);
        }
        let mut w = self.weights.matrix().clone();
        w.iter_mut().for_each(round);
        self.weights = SignatureWeights::new(w).expect("rounding keeps rows unit norm");
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.string(&serde_json::to_string(&self.meta)?);
        w.u32(self.schema.len() as u32);
        for a in &self.schema {
            w.string(a);
        }
        let e = &self.embedding;
        let cfg = e.config();
        w.u32(cfg.dim as u32);
        w.u32(cfg.bucket_count as u32);
        w.u32(cfg.min_n as u32);
        w.u32(cfg.max_n as u32);
        w.u64(cfg.hash_seed);
        w.bytes(&[u8::from(e.trainable())]);
        w.floats(e.rows().iter());
        w.u32(e.pretrained_tokens().len() as u32);
        for (tok, vec) in e.pretrained_tokens().iter().zip(e.pretrained_vectors().rows()) {
            w.string(tok);
            w.floats(vec.iter());
        }
        for enc in &self.encoders {
            w.u32(enc.hidden() as u32);
            w.u32(enc.max_len as u32);
            w.f32(enc.rho);
            for s in enc.params.slices() {
                w.floats(s.iter());
            }
        }
        let m = self.weights.matrix();
        w.u32(m.nrows() as u32);
        w.u32(m.ncols() as u32);
        w.floats(m.iter());
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model file version {version} is not supported (expected {MODEL_VERSION})"
            )));
        }
        let meta: ModelMeta = serde_json::from_str(&r.string()?)?;
        if meta.cell != "gru" {
            return Err(Error::Format(format!("unsupported recurrent cell `{}`", meta.cell)));
        }
        let m = r.u32()? as usize;
        let schema = (0..m).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let dim = r.u32()? as usize;
        let bucket_count = r.u32()? as usize;
        let min_n = r.u32()? as usize;
        let max_n = r.u32()? as usize;
        let hash_seed = r.u64()?;
        let trainable = r.take(1)?[0] != 0;
        let cfg = EmbeddingConfig {
            dim,
            bucket_count,
            min_n,
            max_n,
            hash_seed,
        };
        cfg.validate()?;
        let rows = Array2::from_shape_vec((bucket_count, dim), r.floats(bucket_count * dim)?).expect("sized read");
        let p = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(p);
        let mut pre = Vec::with_capacity(p * dim);
        for _ in 0..p {
            tokens.push(r.string()?);
            pre.extend(r.floats(dim)?);
        }
        let pre = if p == 0 {
            Array2::zeros((0, 0))
        } else {
            Array2::from_shape_vec((p, dim), pre).expect("sized read")
        };
        let embedding = EmbeddingTable::from_parts(cfg, rows, trainable, tokens, pre)?;
        let mut encoders = Vec::with_capacity(m);
        for _ in 0..m {
            let hidden = r.u32()? as usize;
            let max_len = r.u32()? as usize;
            let rho = f64::from(r.f32()?);
            if !(0.0..=1.0).contains(&rho) || hidden == 0 {
                return Err(Error::Format(format!(
                    "invalid encoder header (hidden {hidden}, rho {rho})"
                )));
            }
            let mut gru = || -> Result<GruParams> {
                Ok(GruParams {
                    w: Array2::from_shape_vec((3 * hidden, dim), r.floats(3 * hidden * dim)?).expect("sized"),
                    u: Array2::from_shape_vec((3 * hidden, hidden), r.floats(3 * hidden * hidden)?).expect("sized"),
                    b_x: Array1::from(r.floats(3 * hidden)?),
                    b_h: Array1::from(r.floats(3 * hidden)?),
                })
            };
            let forward = gru()?;
            let backward = gru()?;
            let attention = Array1::from(r.floats(2 * hidden)?);
            encoders.push(AttentionalEncoder::new(
                EncoderParams {
                    forward,
                    backward,
                    attention,
                },
                rho,
                max_len,
            ));
        }
        let s = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if cols != m {
            return Err(Error::Format(format!(
                "signature matrix has {cols} columns, schema has {m}"
            )));
        }
        let weights = SignatureWeights::new(Array2::from_shape_vec((s, m), r.floats(s * m)?).expect("sized"))?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            schema,
            embedding,
            encoders,
            weights,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
