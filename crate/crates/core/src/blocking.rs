//! Candidate pair generation from learned signatures.
//!
//! For every signature the tuples' unit-normalized signature vectors are
//! indexed with cross-polytope LSH and every tuple queries for neighbors
//! at or above the threshold. The union over signatures is the candidate
//! set.

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::{canonical_pair, Dataset, RecordId};
use crate::error::{Error, Result};
use crate::lsh::{default_max_results, IndexEntry, LshIndex, LshParams};
use crate::model::SignatureModel;

/// Signature and cosine that produced a candidate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub signature: u32,
    pub cosine: f64,
}

/// Canonically ordered, deduplicated candidate pairs. Equality compares
/// pairs and provenance only.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pairs: BTreeMap<(RecordId, RecordId), Option<Provenance>>,
    provenance_columns: bool,
}

impl PartialEq for CandidateSet {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs
    }
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// An empty set that writes `signature_id,cosine` columns even when
    /// it stays empty.
    pub fn with_provenance() -> Self {
        Self {
            pairs: BTreeMap::new(),
            provenance_columns: true,
        }
    }

    /// Adds a pair, keeping the higher-cosine provenance (lower signature
    /// id on ties). Self-pairs are ignored.
    pub fn insert(&mut self, a: &RecordId, b: &RecordId, provenance: Option<Provenance>) {
        if a == b {
            return;
        }
        let key = canonical_pair(a, b);
        match self.pairs.get_mut(&key) {
            None => {
                self.pairs.insert(key, provenance);
            }
            Some(slot) => {
                if let Some(new) = provenance {
                    let better = match slot {
                        None => true,
                        Some(old) => {
                            new.cosine > old.cosine || (new.cosine == old.cosine && new.signature < old.signature)
                        }
                    };
                    if better {
                        *slot = Some(new);
                    }
                }
            }
        }
    }

    pub fn extend(&mut self, other: &CandidateSet) {
        for ((a, b), p) in &other.pairs {
            self.insert(a, b, *p);
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.contains_key(&(RecordId::from(a), RecordId::from(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(RecordId, RecordId), &Option<Provenance>)> {
        self.pairs.iter()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(RecordId, RecordId)> {
        self.pairs.keys()
    }

    pub fn is_subset_of(&self, other: &CandidateSet) -> bool {
        self.pairs.keys().all(|k| other.pairs.contains_key(k))
    }

    /// Writes `id_a,id_b`, plus `signature_id,cosine` when every pair has
    /// provenance (and the set is non-empty or made by
    /// [`CandidateSet::with_provenance`]). Rows are sorted by id pair.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_provenance =
            (self.provenance_columns || !self.pairs.is_empty()) && self.pairs.values().all(Option::is_some);
        let mut w = csv::Writer::from_writer(writer);
        if with_provenance {
            w.write_record(["id_a", "id_b", "signature_id", "cosine"])?;
        } else {
            w.write_record(["id_a", "id_b"])?;
        }
        for ((a, b), p) in &self.pairs {
            match p {
                Some(p) if with_provenance => {
                    w.write_record([a.as_ref(), b.as_ref(), &p.signature.to_string(), &p.cosine.to_string()])?
                }
                _ => w.write_record([a.as_ref(), b.as_ref()])?,
            }
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a candidate CSV (with or without provenance columns).
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(f));
        let mut set = CandidateSet::new();
        set.provenance_columns = reader.headers().map(|h| h.len() == 4).unwrap_or(false);
        for (i, rec) in reader.records().enumerate() {
            let bad = |msg: String| Error::MalformedRow {
                path: path.to_owned(),
                row: i + 1,
                msg,
            };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let provenance = match rec.len() {
                2 => None,
                4 => Some(Provenance {
                    signature: rec[2].trim().parse().map_err(|e| bad(format!("signature_id: {e}")))?,
                    cosine: rec[3].trim().parse().map_err(|e| bad(format!("cosine: {e}")))?,
                }),
                n => return Err(bad(format!("expected 2 or 4 columns, found {n}"))),
            };
            let (a, b) = (RecordId::from(rec[0].trim()), RecordId::from(rec[1].trim()));
            if a == b {
                return Err(bad(format!("self-pair on `{a}`")));
            }
            set.insert(&a, &b, provenance);
        }
        Ok(set)
    }
}

/// Candidate pairs per record: `|C| / n`.
pub fn pe_ratio(candidates: &CandidateSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("P/E ratio of an empty dataset".into()));
    }
    Ok(candidates.len() as f64 / n as f64)
}

/// Unit-normalized signature vectors: `[signature][tuple]`, `None` when
/// missing or zero.
pub type SignatureVectors = Vec<Vec<Option<Vec<f64>>>>;

pub fn compute_signatures(model: &SignatureModel, dataset: &Dataset) -> SignatureVectors {
    let per_tuple: Vec<Vec<Option<Vec<f64>>>> = dataset
        .tuples()
        .par_iter()
        .map(|t| {
            model
                .signatures(t)
                .into_iter()
                .map(|f| {
                    let f = f?;
                    let n = f.dot(&f).sqrt();
                    (n > 0.0 && n.is_finite()).then(|| f.iter().map(|x| x / n).collect())
                })
                .collect()
        })
        .collect();
    (0..model.signature_count())
        .map(|s| per_tuple.iter().map(|sigs| sigs[s].clone()).collect())
        .collect()
}

/// Which tuples are indexed and which query, per the dataset mode.
fn roles(dataset: &Dataset) -> (Vec<usize>, Vec<usize>) {
    if dataset.is_bipartite() {
        let (a, b) = (dataset.table_range(0), dataset.table_range(1));
        if a.len() > b.len() {
            (a.collect(), b.collect())
        } else {
            (b.collect(), a.collect())
        }
    } else {
        let all: Vec<usize> = (0..dataset.n()).collect();
        (all.clone(), all)
    }
}

/// Index over the indexed-role tuples of one signature. Returns the index
/// and, per entry, the dataset position it came from; `None` when no
/// indexed tuple has this signature.
pub fn build_signature_index(
    dataset: &Dataset,
    vectors: &[Option<Vec<f64>>],
    signature: u32,
    params: &LshParams,
) -> Result<Option<(LshIndex, Vec<usize>)>> {
    let (indexed, _) = roles(dataset);
    let positions: Vec<usize> = indexed.iter().copied().filter(|&i| vectors[i].is_some()).collect();
    let Some(dim) = positions.first().and_then(|&i| vectors[i].as_ref()).map(Vec::len) else {
        return Ok(None);
    };
    let items = positions
        .iter()
        .map(|&i| {
            (
                IndexEntry {
                    id: dataset.tuple(i).record_id.clone(),
                    signature,
                },
                vectors[i].clone().expect("filtered to present vectors"),
            )
        })
        .collect();
    Ok(Some((LshIndex::build(dim, items, params)?, positions)))
}

/// Fails with the attribute differences when `dataset` does not have the
/// schema `model` was trained on.
pub fn check_schema(dataset: &Dataset, model: &SignatureModel) -> Result<()> {
    if dataset.schema() != model.schema.as_slice() {
        return Err(Error::SchemaMismatch(model.schema_diff(dataset.schema()).join("; ")));
    }
    Ok(())
}

/// LSH blocking over precomputed signature vectors. `max_results = None`
/// uses the default cap for the indexed table size.
pub fn block_with_signatures(
    dataset: &Dataset,
    signatures: &SignatureVectors,
    theta: f64,
    params: &LshParams,
    max_results: Option<usize>,
) -> Result<CandidateSet> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    let (indexed, queries) = roles(dataset);
    let cap = max_results.unwrap_or_else(|| default_max_results(indexed.len()));
    let mut out = CandidateSet::with_provenance();
    for (s, vectors) in signatures.iter().enumerate() {
        let Some((index, positions)) = build_signature_index(dataset, vectors, s as u32, params)? else {
            continue;
        };
        let hits: Vec<Vec<(usize, u32, f64)>> = queries
            .par_iter()
            .map(|&q| {
                let Some(v) = &vectors[q] else {
                    return Ok(Vec::new());
                };
                Ok(index
                    .query(v, theta, cap)?
                    .into_iter()
                    .map(|(e, c)| (q, e, c))
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (q, e, c) in hits.into_iter().flatten() {
            let target = positions[e as usize];
            if target == q {
                continue;
            }
            out.insert(
                &dataset.tuple(q).record_id,
                &dataset.tuple(target).record_id,
                Some(Provenance {
                    signature: s as u32,
                    cosine: c,
                }),
            );
        }
    }
    Ok(out)
}

/// Candidate pairs for `dataset` under `model` at threshold `theta`.
pub fn block(dataset: &Dataset, model: &SignatureModel, theta: f64, params: &LshParams) -> Result<CandidateSet> {
    check_schema(dataset, model)?;
    block_with_signatures(dataset, &compute_signatures(model, dataset), theta, params, None)
}

/// Exhaustive reference: every cross-role pair whose signature cosine
/// reaches `theta` on some signature.
pub fn brute_force_block(dataset: &Dataset, signatures: &SignatureVectors, theta: f64) -> CandidateSet {
    let (indexed, queries) = roles(dataset);
    let mut out = CandidateSet::with_provenance();
    for (s, vectors) in signatures.iter().enumerate() {
        for &q in &queries {
            let Some(vq) = &vectors[q] else { continue };
            for &i in &indexed {
                if i == q {
                    continue;
                }
                let Some(vi) = &vectors[i] else { continue };
                let c: f64 = vq.iter().zip(vi).map(|(a, b)| a * b).sum();
                if c >= theta {
                    out.insert(
                        &dataset.tuple(q).record_id,
                        &dataset.tuple(i).record_id,
                        Some(Provenance {
                            signature: s as u32,
                            cosine: c,
                        }),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeValue, Tuple};

    fn rid(s: &str) -> RecordId {
        RecordId::from(s)
    }

    fn dataset(n: usize) -> Dataset {
        let tuples = (0..n)
            .map(|i| Tuple::new(format!("t{i}"), vec![AttributeValue::from_tokens(["x"])]))
            .collect();
        Dataset::self_join(vec!["a".into()], tuples).unwrap()
    }

    fn one_hot(d: usize, k: usize) -> Option<Vec<f64>> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        Some(v)
    }

    #[test]
    fn candidate_set_is_canonical() {
        let mut c = CandidateSet::new();
        c.insert(&rid("b"), &rid("a"), None);
        c.insert(&rid("a"), &rid("b"), None);
        c.insert(&rid("a"), &rid("a"), None);
        assert_eq!(c.len(), 1);
        assert!(c.contains("b", "a"));
    }

    #[test]
    fn provenance_keeps_best() {
        let mut c = CandidateSet::new();
        c.insert(
            &rid("a"),
            &rid("b"),
            Some(Provenance {
                signature: 1,
                cosine: 0.85,
            }),
        );
        c.insert(
            &rid("b"),
            &rid("a"),
            Some(Provenance {
                signature: 0,
                cosine: 0.9,
            }),
        );
        c.insert(
            &rid("b"),
            &rid("a"),
            Some(Provenance {
                signature: 2,
                cosine: 0.88,
            }),
        );
        let p = c.iter().next().unwrap().1.unwrap();
        assert_eq!((p.signature, p.cosine), (0, 0.9));
    }

    #[test]
    fn pe_ratio_examples() {
        let mut c = CandidateSet::new();
        assert_eq!(pe_ratio(&c, 10).unwrap(), 0.0);
        for i in 0..50 {
            c.insert(&rid(&format!("x{i}")), &rid(&format!("y{i}")), None);
        }
        assert_eq!(pe_ratio(&c, 10).unwrap(), 5.0);
        assert!(pe_ratio(&c, 0).is_err());
    }

    #[test]
    fn orthogonal_signatures_give_no_pairs() {
        let ds = dataset(8);
        let sigs = vec![(0..8).map(|i| one_hot(8, i)).collect()];
        let c = block_with_signatures(&ds, &sigs, 0.8, &LshParams::default(), None).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn duplicates_always_pair() {
        let ds = dataset(6);
        let mut v: Vec<Option<Vec<f64>>> = (0..6).map(|i| one_hot(8, i)).collect();
        v[5] = v[2].clone();
        v[4] = None;
        let c = block_with_signatures(&ds, &vec![v], 0.8, &LshParams::default(), None).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.contains("t2", "t5"));
    }

    #[test]
    fn two_signatures_bridge_a_chain() {
        // x1~x2 on signature 0, x2~x3 on signature 1, x1 and x3 unrelated.
        let ds = dataset(3);
        let s0 = vec![one_hot(4, 0), one_hot(4, 0), one_hot(4, 1)];
        let s1 = vec![one_hot(4, 2), one_hot(4, 3), one_hot(4, 3)];
        let c = block_with_signatures(&ds, &vec![s0, s1], 0.9, &LshParams::default(), None).unwrap();
        assert!(c.contains("t0", "t1") && c.contains("t1", "t2"));
        assert!(!c.contains("t0", "t2"));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn bipartite_pairs_cross_tables() {
        let left: Vec<Tuple> = (0..3)
            .map(|i| Tuple::new(format!("l{i}"), vec![AttributeValue::from_tokens(["x"])]))
            .collect();
        let right: Vec<Tuple> = (0..4)
            .map(|i| Tuple::new(format!("r{i}"), vec![AttributeValue::from_tokens(["x"])]))
            .collect();
        let ds = Dataset::bipartite(vec!["a".into()], left, right).unwrap();
        let same = vec![Some(vec![1.0, 0.0]); 7];
        let c = block_with_signatures(&ds, &vec![same], 0.5, &LshParams::default(), None).unwrap();
        assert_eq!(c.len(), 12);
        assert!(c.pairs().all(|(a, b)| a.starts_with('l') != b.starts_with('l')));
    }

    #[test]
    fn csv_round_trip() {
        let mut c = CandidateSet::new();
        c.insert(
            &rid("b"),
            &rid("a"),
            Some(Provenance {
                signature: 1,
                cosine: 0.8123456789,
            }),
        );
        c.insert(
            &rid("c"),
            &rid("a"),
            Some(Provenance {
                signature: 0,
                cosine: 1.0,
            }),
        );
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id_a,id_b,signature_id,cosine\na,b,1,0.8123456789\na,c,0,1\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        c.save(&p).unwrap();
        assert_eq!(CandidateSet::load(&p).unwrap(), c);
    }
}
