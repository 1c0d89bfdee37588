//! Comparison blockers: exact key equality and MinHash LSH on token sets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::CandidateSet;
use crate::data::{AttributeValue, Dataset};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, hash_str, Fnv1a64};

/// Which attributes form the blocking key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeySpec {
    Single(String),
    /// Pairs agreeing on any one of the attributes.
    Disjunctive(Vec<String>),
    /// Pairs agreeing on all of the attributes.
    Conjunctive(Vec<String>),
}

impl KeySpec {
    pub fn attributes(&self) -> Vec<&str> {
        match self {
            KeySpec::Single(a) => vec![a.as_str()],
            KeySpec::Disjunctive(v) | KeySpec::Conjunctive(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

impl std::fmt::Display for KeySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeySpec::Single(a) => f.write_str(a),
            KeySpec::Disjunctive(v) => f.write_str(&v.join("|")),
            KeySpec::Conjunctive(v) => f.write_str(&v.join("+")),
        }
    }
}

/// `title` is a single key, `title|artist` a disjunction and
/// `title+artist` a conjunction.
impl FromStr for KeySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let split = |sep: char| -> Result<Vec<String>> {
            let parts: Vec<String> = s.split(sep).map(|p| p.trim().to_owned()).collect();
            if parts.iter().any(String::is_empty) {
                return Err(Error::InvalidArgument(format!("empty attribute in key spec `{s}`")));
            }
            Ok(parts)
        };
        match (s.contains('|'), s.contains('+')) {
            (true, true) => Err(Error::InvalidArgument(format!("key spec `{s}` mixes `|` and `+`"))),
            (true, false) => Ok(KeySpec::Disjunctive(split('|')?)),
            (false, true) => Ok(KeySpec::Conjunctive(split('+')?)),
            (false, false) if s.trim().is_empty() => Err(Error::InvalidArgument("empty key spec".into())),
            (false, false) => Ok(KeySpec::Single(s.trim().to_owned())),
        }
    }
}

fn resolve(dataset: &Dataset, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            dataset
                .attribute_index(n)
                .ok_or_else(|| Error::SchemaMismatch(format!("key attribute `{n}` is not in the schema")))
        })
        .collect()
}

/// Emits every admissible pair inside each group.
fn pairs_within_groups<K: Ord>(dataset: &Dataset, groups: BTreeMap<K, Vec<usize>>, out: &mut CandidateSet) {
    for members in groups.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                if dataset.is_bipartite() && dataset.table_of(i) == dataset.table_of(j) {
                    continue;
                }
                out.insert(&dataset.tuple(i).record_id, &dataset.tuple(j).record_id, None);
            }
        }
    }
}

fn key_groups(dataset: &Dataset, attrs: &[usize]) -> BTreeMap<Vec<String>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.tuples().iter().enumerate() {
        if attrs.iter().any(|&a| t.attributes[a].is_missing()) {
            continue;
        }
        let key = attrs.iter().map(|&a| t.attributes[a].joined()).collect();
        groups.entry(key).or_default().push(i);
    }
    groups
}

/// Pairs whose key strings (tokens joined by single spaces) agree
/// exactly. Missing key values never match.
pub fn key_block(dataset: &Dataset, spec: &KeySpec) -> Result<CandidateSet> {
    let attrs = resolve(dataset, &spec.attributes())?;
    let mut out = CandidateSet::new();
    match spec {
        KeySpec::Single(_) | KeySpec::Conjunctive(_) => {
            pairs_within_groups(dataset, key_groups(dataset, &attrs), &mut out)
        }
        KeySpec::Disjunctive(_) => {
            for a in attrs {
                pairs_within_groups(dataset, key_groups(dataset, &[a]), &mut out);
            }
        }
    }
    Ok(out)
}

/// Tokens plus every contiguous token n-gram of length `2..=ngram_n`,
/// joined by single spaces. Empty for a missing value.
pub fn representative_set(value: &AttributeValue, ngram_n: usize) -> BTreeSet<String> {
    let tokens = value.tokens();
    let mut set: BTreeSet<String> = tokens.iter().cloned().collect();
    for n in 2..=ngram_n {
        for w in tokens.windows(n) {
            set.insert(w.join(" "));
        }
    }
    set
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

const MERSENNE_61: u64 = (1 << 61) - 1;

fn mod_mersenne(x: u128) -> u64 {
    let p = u128::from(MERSENNE_61);
    let mut r = (x & p) + (x >> 61);
    while r >= p {
        r -= p;
    }
    r as u64
}

/// Family of `(a x + b) mod (2^61 - 1)` hash functions applied to a fixed
/// 64-bit string hash; each row simulates one random permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHasher {
    coefficients: Vec<(u64, u64)>,
    seed: u64,
}

impl MinHasher {
    pub fn new(num_hashes: usize, seed: u64) -> Self {
        let coefficients = (0..num_hashes)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
                (rng.random_range(1..MERSENNE_61), rng.random_range(0..MERSENNE_61))
            })
            .collect();
        Self { coefficients, seed }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Row-wise minimum hash values; `None` for an empty set.
    pub fn sketch<'a, I>(&self, items: I) -> Option<Vec<u64>>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let base: Vec<u64> = items
            .into_iter()
            .map(|s| hash_str(self.seed, s) % MERSENNE_61)
            .collect();
        if base.is_empty() {
            return None;
        }
        Some(
            self.coefficients
                .iter()
                .map(|&(a, b)| {
                    base.iter()
                        .map(|&x| mod_mersenne(u128::from(a) * u128::from(x) + u128::from(b)))
                        .min()
                        .expect("non-empty")
                })
                .collect(),
        )
    }
}

/// Fraction of rows on which two sketches agree.
pub fn estimate_jaccard(a: &[u64], b: &[u64]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinHashParams {
    pub bands: usize,
    pub rows_per_band: usize,
    /// Longest token n-gram in the representative sets.
    pub ngram_n: usize,
    pub seed: u64,
    /// Keep only banded pairs whose exact Jaccard reaches the threshold.
    pub verify: bool,
}

impl Default for MinHashParams {
    fn default() -> Self {
        Self {
            bands: 32,
            rows_per_band: 4,
            ngram_n: 3,
            seed: 11,
            verify: true,
        }
    }
}

/// MinHash banding on the given attributes' representative sets; the
/// result is the union over attributes.
pub fn minhash_block(
    dataset: &Dataset,
    attributes: &[&str],
    theta: f64,
    params: &MinHashParams,
) -> Result<CandidateSet> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    if params.bands == 0 || params.rows_per_band == 0 || params.ngram_n == 0 {
        return Err(Error::Config(
            "minhash bands, rows_per_band and ngram_n must be positive".into(),
        ));
    }
    let attrs = resolve(dataset, attributes)?;
    let hasher = MinHasher::new(params.bands * params.rows_per_band, params.seed);
    let mut out = CandidateSet::new();
    for a in attrs {
        let sets: Vec<BTreeSet<String>> = dataset
            .tuples()
            .par_iter()
            .map(|t| representative_set(&t.attributes[a], params.ngram_n))
            .collect();
        let sketches: Vec<Option<Vec<u64>>> = sets.par_iter().map(|s| hasher.sketch(s)).collect();
        let mut pairs: HashSet<(u32, u32)> = HashSet::new();
        for band in 0..params.bands {
            let mut buckets: HashMap<u64, Vec<u32>> = HashMap::new();
            for (i, sk) in sketches.iter().enumerate() {
                let Some(sk) = sk else { continue };
                let mut h = Fnv1a64::with_seed(band as u64);
                for v in &sk[band * params.rows_per_band..(band + 1) * params.rows_per_band] {
                    h.write(&v.to_le_bytes());
                }
                buckets.entry(h.finish()).or_default().push(i as u32);
            }
            for members in buckets.values() {
                for (x, &i) in members.iter().enumerate() {
                    for &j in &members[x + 1..] {
                        if dataset.is_bipartite() && dataset.table_of(i as usize) == dataset.table_of(j as usize) {
                            continue;
                        }
                        pairs.insert((i, j));
                    }
                }
            }
        }
        let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        let keep: Vec<bool> = pairs
            .par_iter()
            .map(|&(i, j)| !params.verify || jaccard(&sets[i as usize], &sets[j as usize]) >= theta)
            .collect();
        for (&(i, j), k) in pairs.iter().zip(keep) {
            if k {
                out.insert(
                    &dataset.tuple(i as usize).record_id,
                    &dataset.tuple(j as usize).record_id,
                    None,
                );
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Tuple;
    use crate::tokenize::tokenize;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn music() -> Dataset {
        let rows = [
            ("1", "me and mrs. jones", "billy paul"),
            ("2", "me and mrs. jones", "michael buble"),
            ("3", "blowin' in the wind", "bob dylan"),
            ("4", "blowing in the wind", "bob dylan"),
            ("5", "", "bob dylan"),
            ("6", "", "nina simone"),
        ];
        let tuples = rows
            .iter()
            .map(|(id, t, a)| Tuple::new(*id, vec![tokenize(t), tokenize(a)]))
            .collect();
        Dataset::self_join(vec!["title".into(), "artist".into()], tuples).unwrap()
    }

    #[test]
    fn key_spec_parsing() {
        assert_eq!("title".parse::<KeySpec>().unwrap(), KeySpec::Single("title".into()));
        assert_eq!(
            "title|artist".parse::<KeySpec>().unwrap(),
            KeySpec::Disjunctive(vec!["title".into(), "artist".into()])
        );
        assert_eq!(
            "title+artist".parse::<KeySpec>().unwrap(),
            KeySpec::Conjunctive(vec!["title".into(), "artist".into()])
        );
        assert!("a|b+c".parse::<KeySpec>().is_err());
        assert!("a||b".parse::<KeySpec>().is_err());
    }

    #[test]
    fn key_blocking_examples() {
        let ds = music();
        let title = key_block(&ds, &KeySpec::Single("title".into())).unwrap();
        assert!(title.contains("1", "2"));
        assert!(!title.contains("3", "4"));
        assert!(!title.contains("5", "6"));
        assert_eq!(title.len(), 1);
        let artist = key_block(&ds, &KeySpec::Single("artist".into())).unwrap();
        assert_eq!(artist.len(), 3);
        let either = key_block(&ds, &"title|artist".parse().unwrap()).unwrap();
        assert!(title.is_subset_of(&either) && artist.is_subset_of(&either));
        assert_eq!(either.len(), 4);
        let both = key_block(&ds, &"title+artist".parse().unwrap()).unwrap();
        assert!(both.is_empty());
        assert!(key_block(&ds, &KeySpec::Single("year".into())).is_err());
    }

    #[test]
    fn representative_sets() {
        let v = AttributeValue::from_tokens(["bob", "dylan"]);
        assert_eq!(representative_set(&v, 2), set(&["bob", "dylan", "bob dylan"]));
        assert_eq!(representative_set(&AttributeValue::from_tokens(["x"]), 3), set(&["x"]));
        assert!(representative_set(&AttributeValue::missing(), 2).is_empty());
        let long = AttributeValue::from_tokens(["a", "b", "c", "d", "e"]);
        assert!(representative_set(&long, 2).len() < 2 * 5);
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
    }

    #[test]
    fn sketch_estimate_is_unbiased() {
        let a = set(&["a", "b", "c", "d", "e", "f"]);
        let b = set(&["c", "d", "e", "f", "g", "h"]);
        let truth = jaccard(&a, &b);
        assert_eq!(truth, 0.5);
        let mut total = 0.0;
        for s in 0..1000 {
            let h = MinHasher::new(1, s);
            total += estimate_jaccard(&h.sketch(&a).unwrap(), &h.sketch(&b).unwrap());
        }
        assert!((total / 1000.0 - truth).abs() <= 0.05);
    }

    #[test]
    fn minhash_blocking_verifies() {
        let ds = music();
        let c = minhash_block(&ds, &["title"], 0.5, &MinHashParams::default()).unwrap();
        assert!(c.contains("1", "2"));
        assert!(!c.contains("5", "6"));
        let all = minhash_block(&ds, &["title", "artist"], 0.5, &MinHashParams::default()).unwrap();
        assert!(c.is_subset_of(&all));
        assert!(all.contains("3", "5"));
        // "blowin' in the wind" vs "blowing in the wind": overlap too small at 0.9
        let strict = minhash_block(&ds, &["title"], 0.9, &MinHashParams::default()).unwrap();
        assert!(!strict.contains("3", "4"));
    }
}
