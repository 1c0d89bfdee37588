//! Index file.
//!
//! Layout (little-endian, floats 32-bit):
//!
//! ```text
//! magic        8 bytes  "SIGBLKIX"
//! version      u32      = 1
//! dim          u32      vector dimension d
//! padded_dim   u32      d' (next power of two of d)
//! tables       u32      K
//! hashes       u32      B (hashes per table)
//! multiprobe   u32
//! seed         u64
//! rotations    K*B matrices, each d'*d' f32 row-major, table-major order
//! entries      u32 n, then n x (u32 len + UTF-8 id, u32 signature, d f32)
//! tables       K x (u32 buckets, then per bucket in ascending key order:
//!                   u64 key, u32 len, len x u32 entry index ascending)
//! ```
//!
//! A bucket key packs the table's B signed-axis codes (`2 * axis + sign`,
//! sign 1 for negative) as digits in base `2 d'`, first hash most
//! significant.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{padded_dim, IndexEntry, LshIndex, LshParams, Rotation};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"SIGBLKIX";
pub const INDEX_VERSION: u32 = 1;

impl LshIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.u32(self.dim as u32);
        w.u32(self.padded_dim as u32);
        w.u32(self.params.tables as u32);
        w.u32(self.params.hashes_per_table as u32);
        w.u32(self.params.multiprobe as u32);
        w.u64(self.params.seed);
        for r in &self.rotations {
            w.floats(r.values().iter());
        }
        w.u32(self.entries.len() as u32);
        for (i, e) in self.entries.iter().enumerate() {
            w.string(&e.id);
            w.u32(e.signature);
            w.floats(self.vector(i).iter());
        }
        for table in &self.tables {
            let mut keys: Vec<&u64> = table.keys().collect();
            keys.sort_unstable();
            w.u32(keys.len() as u32);
            for k in keys {
                let bucket = &table[k];
                w.u64(*k);
                w.u32(bucket.len() as u32);
                for &e in bucket {
                    w.u32(e);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!(
                "index file version {version} is not supported (expected {INDEX_VERSION})"
            )));
        }
        let dim = r.u32()? as usize;
        let padded = r.u32()? as usize;
        if dim == 0 || padded != padded_dim(dim) {
            return Err(Error::Format(format!(
                "inconsistent dimensions d = {dim}, d' = {padded}"
            )));
        }
        let params = LshParams {
            tables: r.u32()? as usize,
            hashes_per_table: r.u32()? as usize,
            multiprobe: r.u32()? as usize,
            seed: r.u64()?,
        };
        params.validate(padded)?;
        let mut rotations = Vec::with_capacity(params.tables * params.hashes_per_table);
        for _ in 0..params.tables * params.hashes_per_table {
            let values = r.floats(padded * padded)?;
            rotations.push(Rotation::from_values(
                padded,
                values.into_iter().map(|x| x as f32).collect(),
            ));
        }
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let id = r.string()?;
            let signature = r.u32()?;
            entries.push(IndexEntry {
                id: id.into(),
                signature,
            });
            vectors.extend(r.floats(dim)?);
        }
        let mut tables = Vec::with_capacity(params.tables);
        for _ in 0..params.tables {
            let buckets = r.u32()? as usize;
            let mut table = HashMap::with_capacity(buckets);
            for _ in 0..buckets {
                let key = r.u64()?;
                let len = r.u32()? as usize;
                let members = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if members.iter().any(|&e| e as usize >= n) {
                    return Err(Error::Format("bucket refers to a missing entry".into()));
                }
                table.insert(key, members);
            }
            tables.push(table);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after index",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            dim,
            padded_dim: padded,
            params,
            rotations,
            entries,
            vectors,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
