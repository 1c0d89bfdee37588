//! Evaluation: group-closed train/test splits, recall and P/E scoring,
//! aggregation over repeats, and a synthetic corpus generator.

mod experiment;
mod report;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocking::CandidateSet;
use crate::data::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

pub use experiment::{run_experiment, ExperimentConfig, Method};
pub use report::{report, summary_text, write_metrics_csv, write_summary_csv, MetricRow, SummaryRow};
pub use synth::{synthesize, synthesize_corpus, Regime, SynthSpec, SyntheticCorpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Share of match groups assigned to training.
    pub train_fraction: f64,
    /// Share of unlabeled tuples added to the training side.
    pub unlabeled_train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            unlabeled_train_fraction: 0.2,
            repeats: 5,
            seed: 2024,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_train_fraction) {
            return Err(Error::Config(
                "split.unlabeled_train_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(Error::Config("split.repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// One train/test partition. Indices refer to the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_labels: LabelSet,
    pub test_labels: LabelSet,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the label graph, each sorted, ordered by
/// smallest member.
pub fn match_groups(labels: &LabelSet, dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(dataset.n());
    let pairs = labels.index_pairs(dataset);
    for &(a, b) in &pairs {
        uf.union(a, b);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &pairs {
        for x in [a, b] {
            let r = uf.find(x);
            groups.entry(r).or_default().push(x);
        }
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g.dedup();
            g
        })
        .collect()
}

/// `spec.repeats` independent splits. Every match group lies wholly on
/// one side; unlabeled tuples are shared out by `unlabeled_train_fraction`.
pub fn split(labels: &LabelSet, dataset: &Dataset, spec: &SplitSpec) -> Result<Vec<Split>> {
    spec.validate()?;
    let groups = match_groups(labels, dataset);
    let mut labeled = vec![false; dataset.n()];
    for g in &groups {
        for &i in g {
            labeled[i] = true;
        }
    }
    let unlabeled: Vec<usize> = (0..dataset.n()).filter(|&i| !labeled[i]).collect();
    let round = |f: f64, n: usize| ((f * n as f64).round() as usize).min(n);
    (0..spec.repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, r as u64));
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut rng);
            let cut = round(spec.train_fraction, groups.len());
            let mut train_side = vec![false; dataset.n()];
            for &g in &order[..cut] {
                for &i in &groups[g] {
                    train_side[i] = true;
                }
            }
            let mut rest = unlabeled.clone();
            rest.shuffle(&mut rng);
            for &i in &rest[..round(spec.unlabeled_train_fraction, rest.len())] {
                train_side[i] = true;
            }
            let train: Vec<usize> = (0..dataset.n()).filter(|&i| train_side[i]).collect();
            let test: Vec<usize> = (0..dataset.n()).filter(|&i| !train_side[i]).collect();
            let side = |id: &str| dataset.index_of(id).map(|i| train_side[i]);
            Ok(Split {
                train_labels: labels.filter(|id| side(id) == Some(true)),
                test_labels: labels.filter(|id| side(id) == Some(false)),
                train,
                test,
            })
        })
        .collect()
}

/// Share of `labels` found in `candidates`.
pub fn recall(candidates: &CandidateSet, labels: &LabelSet) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("recall needs at least one label pair".into()));
    }
    let hit = labels.iter().filter(|(a, b)| candidates.contains(a, b)).count();
    Ok(hit as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeValue, RecordId, Tuple};

    fn dataset(n: usize) -> Dataset {
        let tuples = (0..n)
            .map(|i| {
                Tuple::new(
                    format!("{}", (b'a' + i as u8) as char),
                    vec![AttributeValue::from_tokens(["x"])],
                )
            })
            .collect();
        Dataset::self_join(vec!["v".into()], tuples).unwrap()
    }

    #[test]
    fn chained_labels_stay_together() {
        let ds = dataset(10);
        let labels = LabelSet::from_pairs([("a", "b"), ("b", "c"), ("e", "f"), ("g", "h")], &ds).unwrap();
        let spec = SplitSpec {
            repeats: 20,
            ..SplitSpec::default()
        };
        for s in split(&labels, &ds, &spec).unwrap() {
            let in_train = |id: &str| s.train.contains(&ds.index_of(id).unwrap());
            assert_eq!(in_train("a"), in_train("b"));
            assert_eq!(in_train("b"), in_train("c"));
            assert_eq!(s.train_labels.len() + s.test_labels.len(), labels.len());
            assert_eq!(s.train.len() + s.test.len(), 10);
        }
    }

    #[test]
    fn single_group_goes_to_train_near_one() {
        let ds = dataset(4);
        let labels = LabelSet::from_pairs([("a", "b")], &ds).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.999,
            repeats: 1,
            ..SplitSpec::default()
        };
        let s = &split(&labels, &ds, &spec).unwrap()[0];
        assert_eq!(s.train_labels.len(), 1);
    }

    #[test]
    fn splits_are_reproducible() {
        let ds = dataset(12);
        let labels = LabelSet::from_pairs([("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")], &ds).unwrap();
        let spec = SplitSpec::default();
        assert_eq!(split(&labels, &ds, &spec).unwrap(), split(&labels, &ds, &spec).unwrap());
    }

    #[test]
    fn recall_examples() {
        let ds = dataset(8);
        let labels = LabelSet::from_pairs([("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")], &ds).unwrap();
        let mut c = CandidateSet::new();
        assert_eq!(recall(&c, &labels).unwrap(), 0.0);
        for (a, b) in [("a", "b"), ("c", "d"), ("f", "e")] {
            c.insert(&RecordId::from(a), &RecordId::from(b), None);
        }
        assert_eq!(recall(&c, &labels).unwrap(), 0.75);
        c.insert(&RecordId::from("g"), &RecordId::from("h"), None);
        c.insert(&RecordId::from("a"), &RecordId::from("h"), None);
        assert_eq!(recall(&c, &labels).unwrap(), 1.0);
        assert!(recall(&c, &LabelSet::default()).is_err());
    }
}
