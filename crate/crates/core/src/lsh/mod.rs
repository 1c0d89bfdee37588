//! Cross-polytope LSH over unit vectors.
//!
//! A hash maps a vector, zero-padded to the next power of two and randomly
//! rotated, to its nearest signed standard basis vector. Each table keys
//! its buckets on `B` such hashes; a query probes its own bucket in every
//! table plus, per table, the buckets obtained by swapping the least
//! certain hashes for their runner-up axes. Candidates are re-ranked by
//! exact cosine.

mod io;
pub mod theory;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RecordId;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

pub use io::{INDEX_MAGIC, INDEX_VERSION};

/// Allowed deviation from unit norm for indexed and query vectors.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshParams {
    pub tables: usize,
    pub hashes_per_table: usize,
    /// Extra buckets probed per table (at most `hashes_per_table`).
    pub multiprobe: usize,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            tables: 10,
            hashes_per_table: 2,
            multiprobe: 1,
            seed: 7,
        }
    }
}

impl LshParams {
    pub fn validate(&self, padded_dim: usize) -> Result<()> {
        if self.tables == 0 || self.hashes_per_table == 0 {
            return Err(Error::Config(
                "lsh.tables and lsh.hashes_per_table must be positive".into(),
            ));
        }
        let bits = (2 * padded_dim).trailing_zeros() as usize * self.hashes_per_table;
        if bits > 64 {
            return Err(Error::Config(format!(
                "{} hashes of dimension {padded_dim} do not fit a 64-bit bucket key",
                self.hashes_per_table
            )));
        }
        Ok(())
    }
}

/// Square orthogonal matrix, row-major. Entries are held at 32-bit
/// precision so a persisted index hashes exactly like the original.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    m: Vec<f64>,
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        Self { dim, m }
    }

    /// Uniformly random rotation: Gaussian matrix orthonormalized row by
    /// row with modified Gram-Schmidt.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut m: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..dim {
            for k in 0..i {
                let dot: f64 = (0..dim).map(|c| m[i * dim + c] * m[k * dim + c]).sum();
                for c in 0..dim {
                    m[i * dim + c] -= dot * m[k * dim + c];
                }
            }
            let norm = (0..dim).map(|c| m[i * dim + c].powi(2)).sum::<f64>().sqrt();
            for c in 0..dim {
                m[i * dim + c] /= norm;
            }
        }
        Self::from_values(dim, m.into_iter().map(|x| x as f32).collect())
    }

    pub(crate) fn from_values(dim: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), dim * dim);
        Self {
            dim,
            m: values.into_iter().map(f64::from).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    /// `R v`, treating `v` as zero-padded to the rotation size.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out);
        out
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.m[r * self.dim..r * self.dim + v.len()];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|r| self.m[r * d + a] * self.m[r * d + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Smallest power of two at least `d`.
pub fn padded_dim(d: usize) -> usize {
    d.max(1).next_power_of_two()
}

/// Signed 1-based axis index: `+j` for `e_j`, `-j` for `-e_j`.
pub type SignedAxis = i64;

fn axis_code(j: usize, negative: bool) -> u64 {
    (2 * j + usize::from(negative)) as u64
}

fn code_to_axis(code: u64) -> SignedAxis {
    let j = (code / 2) as i64 + 1;
    if code % 2 == 1 {
        -j
    } else {
        j
    }
}

/// Best and runner-up signed axes of a rotated vector, plus the margin
/// between them. Ties go to the smaller index, positive sign first.
fn nearest_axes(x: &[f64]) -> (u64, u64, f64) {
    let (mut best, mut best_v) = (0u64, f64::NEG_INFINITY);
    let (mut second, mut second_v) = (0u64, f64::NEG_INFINITY);
    for (j, &v) in x.iter().enumerate() {
        for (neg, val) in [(false, v), (true, -v)] {
            let code = axis_code(j, neg);
            if val > best_v {
                second = best;
                second_v = best_v;
                best = code;
                best_v = val;
            } else if val > second_v {
                second = code;
                second_v = val;
            }
        }
    }
    (best, second, best_v - second_v)
}

/// Nearest signed basis vector of `R v`.
pub fn hash_one(rotation: &Rotation, v: &[f64]) -> SignedAxis {
    code_to_axis(nearest_axes(&rotation.apply(v)).0)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexEntry {
    pub id: RecordId,
    pub signature: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshIndex {
    dim: usize,
    padded_dim: usize,
    params: LshParams,
    /// `tables * hashes_per_table` rotations, table-major.
    rotations: Vec<Rotation>,
    entries: Vec<IndexEntry>,
    /// Row-major `entries x dim`, rounded to 32-bit precision.
    vectors: Vec<f64>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

/// Per-hash outcome used to form the primary and probe keys.
struct HashOutcome {
    best: u64,
    second: u64,
    gap: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl LshIndex {
    /// Builds an index over `(entry, unit vector)` items of dimension `dim`.
    pub fn build(dim: usize, items: Vec<(IndexEntry, Vec<f64>)>, params: &LshParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("index dimension must be positive".into()));
        }
        let padded = padded_dim(dim);
        params.validate(padded)?;
        let mut seen = std::collections::HashSet::with_capacity(items.len());
        let mut entries = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len() * dim);
        for (entry, v) in items {
            if v.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "vector for `{}` has dimension {}, expected {dim}",
                    entry.id,
                    v.len()
                )));
            }
            let n = norm(&v);
            if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(Error::NotUnitNorm {
                    id: entry.id.to_string(),
                    signature: entry.signature,
                    norm: n,
                });
            }
            if !seen.insert(entry.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry `{}` for signature {}",
                    entry.id, entry.signature
                )));
            }
            vectors.extend(v.iter().map(|&x| f64::from(x as f32)));
            entries.push(entry);
        }
        let rotations = (0..params.tables * params.hashes_per_table)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, r as u64));
                Rotation::random(padded, &mut rng)
            })
            .collect();
        let mut index = Self {
            dim,
            padded_dim: padded,
            params: params.clone(),
            rotations,
            entries,
            vectors,
            tables: vec![HashMap::new(); params.tables],
        };
        index.fill_tables();
        Ok(index)
    }

    fn fill_tables(&mut self) {
        let keys: Vec<Vec<u64>> = (0..self.entries.len())
            .into_par_iter()
            .map(|e| {
                let outcomes = self.hash_all(self.vector(e));
                (0..self.params.tables)
                    .map(|t| self.primary_key(&outcomes, t))
                    .collect()
            })
            .collect();
        for (e, per_table) in keys.into_iter().enumerate() {
            for (table, key) in self.tables.iter_mut().zip(per_table) {
                table.entry(key).or_default().push(e as u32);
            }
        }
    }

    fn hash_all(&self, v: &[f64]) -> Vec<HashOutcome> {
        let mut buf = vec![0.0; self.padded_dim];
        self.rotations
            .iter()
            .map(|r| {
                r.apply_into(v, &mut buf);
                let (best, second, gap) = nearest_axes(&buf);
                HashOutcome { best, second, gap }
            })
            .collect()
    }

    fn key_of(&self, codes: impl Iterator<Item = u64>) -> u64 {
        let base = 2 * self.padded_dim as u64;
        codes.fold(0u64, |acc, c| acc.wrapping_mul(base).wrapping_add(c))
    }

    fn primary_key(&self, outcomes: &[HashOutcome], table: usize) -> u64 {
        let b = self.params.hashes_per_table;
        self.key_of(outcomes[table * b..(table + 1) * b].iter().map(|o| o.best))
    }

    /// Primary key followed by the multiprobe keys for one table.
    fn probe_keys(&self, outcomes: &[HashOutcome], table: usize) -> Vec<u64> {
        let b = self.params.hashes_per_table;
        let hashes = &outcomes[table * b..(table + 1) * b];
        let mut keys = vec![self.key_of(hashes.iter().map(|o| o.best))];
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&x, &y| hashes[x].gap.total_cmp(&hashes[y].gap).then(x.cmp(&y)));
        for &swap in order.iter().take(self.params.multiprobe) {
            keys.push(
                self.key_of(
                    hashes
                        .iter()
                        .enumerate()
                        .map(|(i, o)| if i == swap { o.second } else { o.best }),
                ),
            );
        }
        keys
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn params(&self) -> &LshParams {
        &self.params
    }

    pub fn rotations(&self) -> &[Rotation] {
        &self.rotations
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, i: u32) -> &IndexEntry {
        &self.entries[i as usize]
    }

    /// Stored (32-bit rounded) vector of entry `i`.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    /// Total bucket memberships over all tables.
    pub fn stored_entries(&self) -> usize {
        self.tables.iter().flat_map(|t| t.values()).map(Vec::len).sum()
    }

    /// Distinct entries sharing a probed bucket with `q`, ascending.
    pub fn candidates(&self, q: &[f64]) -> Vec<u32> {
        let outcomes = self.hash_all(q);
        let mut out = Vec::new();
        for (t, table) in self.tables.iter().enumerate() {
            for key in self.probe_keys(&outcomes, t) {
                if let Some(bucket) = table.get(&key) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Entries with cosine at least `theta` among the probed candidates,
    /// best first (ties by entry order), at most `max_results` of them.
    pub fn query(&self, q: &[f64], theta: f64, max_results: usize) -> Result<Vec<(u32, f64)>> {
        if q.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "query has dimension {}, index has {}",
                q.len(),
                self.dim
            )));
        }
        let n = norm(q);
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::InvalidArgument(format!("query vector has norm {n}, expected 1")));
        }
        let mut hits: Vec<(u32, f64)> = self
            .candidates(q)
            .into_iter()
            .filter_map(|e| {
                let c: f64 = self.vector(e as usize).iter().zip(q).map(|(a, b)| a * b).sum();
                (c >= theta).then_some((e, c))
            })
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(max_results);
        Ok(hits)
    }
}

/// Default per-query result cap for an index over `n` points.
pub fn default_max_results(n: usize) -> usize {
    1000usize.max((n as f64).sqrt().floor() as usize)
}
