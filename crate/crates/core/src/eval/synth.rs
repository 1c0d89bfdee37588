//! Synthetic music-catalog corpus with controlled duplicate noise.
//!
//! Every entity is a song with title, artist, album and composer. Artists
//! release several songs and albums, and composers write for several
//! artists, so no single non-title attribute identifies a song. Each
//! entity yields one clean source record plus noisy duplicates.

use std::io::Write;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet, Tuple};
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Clean,
    Dirty,
    /// Dirty noise, then all attributes concatenated into one.
    Unstructured,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Clean => "clean",
            Regime::Dirty => "dirty",
            Regime::Unstructured => "unstructured",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Regime::Clean),
            "dirty" => Ok(Regime::Dirty),
            "unstructured" => Ok(Regime::Unstructured),
            other => Err(Error::InvalidArgument(format!(
                "unknown regime `{other}` (expected clean, dirty or unstructured)"
            ))),
        }
    }
}

/// Rates apply independently per duplicate: `attr_swap_rate` and
/// `version_suffix_rate` once per record, the others once per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub entity_count: usize,
    pub duplicates_per_entity: usize,
    pub typo_rate: f64,
    pub token_drop_rate: f64,
    pub missing_attr_rate: f64,
    pub attr_swap_rate: f64,
    pub version_suffix_rate: f64,
    pub regime: Regime,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::preset(Regime::Dirty, 1000)
    }
}

impl SynthSpec {
    pub fn preset(regime: Regime, entity_count: usize) -> Self {
        let (typo, drop, missing, swap, version) = match regime {
            Regime::Clean => (0.05, 0.05, 0.0, 0.0, 0.05),
            Regime::Dirty | Regime::Unstructured => (0.3, 0.0, 0.3, 0.2, 0.2),
        };
        Self {
            entity_count,
            duplicates_per_entity: 2,
            typo_rate: typo,
            token_drop_rate: drop,
            missing_attr_rate: missing,
            attr_swap_rate: swap,
            version_suffix_rate: version,
            regime,
        }
    }

    /// A spec with every noise rate zero.
    pub fn noiseless(entity_count: usize, duplicates_per_entity: usize) -> Self {
        Self {
            entity_count,
            duplicates_per_entity,
            typo_rate: 0.0,
            token_drop_rate: 0.0,
            missing_attr_rate: 0.0,
            attr_swap_rate: 0.0,
            version_suffix_rate: 0.0,
            regime: Regime::Clean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("typo_rate", self.typo_rate),
            ("token_drop_rate", self.token_drop_rate),
            ("missing_attr_rate", self.missing_attr_rate),
            ("attr_swap_rate", self.attr_swap_rate),
            ("version_suffix_rate", self.version_suffix_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("synth.{name} = {r} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

const STRUCTURED_SCHEMA: [&str; 4] = ["title", "artist", "album", "composer"];
const TITLE: usize = 0;
const ARTIST: usize = 1;
const COMPOSER: usize = 3;

const COMMON_WORDS: &[&str] = &[
    "love",
    "night",
    "heart",
    "baby",
    "time",
    "world",
    "light",
    "dream",
    "fire",
    "rain",
    "blue",
    "girl",
    "boy",
    "home",
    "road",
    "river",
    "sun",
    "moon",
    "star",
    "day",
    "song",
    "dance",
    "little",
    "wild",
    "sweet",
    "old",
    "new",
    "good",
    "young",
    "lonely",
    "crazy",
    "golden",
    "summer",
    "winter",
    "city",
    "town",
    "wind",
    "sky",
    "sea",
    "street",
    "money",
    "soul",
    "dark",
    "true",
    "last",
    "first",
    "forever",
    "tonight",
    "tomorrow",
    "yesterday",
    "angel",
    "devil",
    "paradise",
    "highway",
    "train",
    "window",
    "door",
    "garden",
    "mountain",
    "ocean",
    "shadow",
    "silver",
    "stone",
    "rose",
    "fever",
    "honey",
    "kiss",
    "tears",
    "smile",
    "memory",
    "story",
    "secret",
    "echo",
    "thunder",
    "storm",
    "spring",
    "morning",
    "evening",
    "midnight",
];
const GLUE: &[&str] = &[
    "the", "of", "in", "my", "your", "a", "on", "to", "and", "for", "with", "me",
];
const VERSIONS: &[&str] = &[
    "[remix]",
    "(live)",
    "[remastered]",
    "(acoustic)",
    "(radio edit)",
    "[demo]",
];
const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "ch", "dr", "gr",
    "kr", "sh", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "x", "th"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    w
}

fn person_name<R: Rng>(rng: &mut R) -> String {
    let mut parts = vec![pseudo_word(rng), pseudo_word(rng)];
    if rng.random_bool(0.15) {
        parts.insert(0, "the".into());
        parts.truncate(2);
    }
    parts.join(" ")
}

fn phrase<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    let mut words = Vec::with_capacity(len);
    for k in 0..len {
        let w = if k > 0 && k + 1 < len && rng.random_bool(0.25) {
            GLUE.choose(rng).expect("non-empty").to_string()
        } else if rng.random_bool(0.6) {
            COMMON_WORDS.choose(rng).expect("non-empty").to_string()
        } else {
            pseudo_word(rng)
        };
        words.push(w);
    }
    words.join(" ")
}

/// One random character edit (substitution, deletion, insertion or
/// transposition) in a random word of `text`; guaranteed to change it.
fn typo<R: Rng>(text: &str, rng: &mut R) -> String {
    let mut words: Vec<Vec<char>> = text.split(' ').map(|w| w.chars().collect()).collect();
    let candidates: Vec<usize> = (0..words.len()).filter(|&i| !words[i].is_empty()).collect();
    let Some(&wi) = candidates.choose(rng) else {
        return text.to_owned();
    };
    let original = words[wi].clone();
    loop {
        let w = &mut words[wi];
        let letter = (b'a' + rng.random_range(0..26u8)) as char;
        match rng.random_range(0..4) {
            0 => {
                let i = rng.random_range(0..w.len());
                w[i] = letter;
            }
            1 => {
                w.remove(rng.random_range(0..w.len()));
            }
            2 => {
                let i = rng.random_range(0..=w.len());
                w.insert(i, letter);
            }
            _ => {
                if w.len() >= 2 {
                    let i = rng.random_range(0..w.len() - 1);
                    w.swap(i, i + 1);
                }
            }
        }
        if words[wi] != original {
            break;
        }
    }
    words
        .iter()
        .map(|w| w.iter().collect::<String>())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn drop_token<R: Rng>(text: &str, rng: &mut R) -> String {
    let mut words: Vec<&str> = text.split(' ').collect();
    if words.len() >= 2 {
        words.remove(rng.random_range(0..words.len()));
    }
    words.join(" ")
}

/// Raw generated records, before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub schema: Vec<String>,
    /// `(record id, raw values)`; `None` is a missing value.
    pub records: Vec<(String, Vec<Option<String>>)>,
    pub labels: Vec<(String, String)>,
    pub regime: Regime,
}

impl SyntheticCorpus {
    pub fn to_dataset(&self) -> Result<(Dataset, LabelSet)> {
        let tuples = self
            .records
            .iter()
            .map(|(id, values)| {
                Tuple::new(
                    id.as_str(),
                    values.iter().map(|v| tokenize(v.as_deref().unwrap_or(""))).collect(),
                )
            })
            .collect();
        let ds = Dataset::self_join(self.schema.clone(), tuples)?;
        let labels = LabelSet::from_pairs(self.labels.iter().cloned(), &ds)?;
        Ok((ds, labels))
    }

    /// Header `id,<schema...>`; missing values are empty cells.
    pub fn write_records<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_owned()];
        header.extend(self.schema.iter().cloned());
        w.write_record(&header)?;
        for (id, values) in &self.records {
            let mut row = vec![id.clone()];
            row.extend(values.iter().map(|v| v.clone().unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    pub fn write_labels<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id_a", "id_b"])?;
        for (a, b) in &self.labels {
            w.write_record([a, b])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

struct Pools {
    artists: Vec<String>,
    albums: Vec<Vec<String>>,
    composers: Vec<String>,
}

impl Pools {
    fn new<R: Rng>(entity_count: usize, rng: &mut R) -> Self {
        let artist_count = (entity_count / 4).max(1);
        let artists: Vec<String> = (0..artist_count).map(|_| person_name(rng)).collect();
        let albums = (0..artist_count)
            .map(|_| (0..rng.random_range(1..=3)).map(|_| phrase(rng, 1, 3)).collect())
            .collect();
        let composers = (0..(entity_count / 4).max(1)).map(|_| person_name(rng)).collect();
        Self {
            artists,
            albums,
            composers,
        }
    }

    fn entity<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let a = rng.random_range(0..self.artists.len());
        let album = self.albums[a].choose(rng).expect("every artist has an album").clone();
        let composer = if rng.random_bool(0.3) {
            self.artists[a].clone()
        } else {
            self.composers.choose(rng).expect("non-empty").clone()
        };
        vec![phrase(rng, 1, 5), self.artists[a].clone(), album, composer]
    }
}

fn corrupt<R: Rng>(source: &[String], spec: &SynthSpec, rng: &mut R) -> Vec<Option<String>> {
    let mut values = source.to_vec();
    if rng.random_bool(spec.attr_swap_rate) {
        values.swap(ARTIST, COMPOSER);
    }
    if rng.random_bool(spec.version_suffix_rate) {
        let v = VERSIONS.choose(rng).expect("non-empty");
        values[TITLE] = format!("{} {v}", values[TITLE]);
    }
    values
        .into_iter()
        .map(|mut v| {
            if rng.random_bool(spec.typo_rate) {
                v = typo(&v, rng);
            }
            if rng.random_bool(spec.token_drop_rate) {
                v = drop_token(&v, rng);
            }
            (!rng.random_bool(spec.missing_attr_rate) && !v.is_empty()).then_some(v)
        })
        .collect()
}

/// Generates the raw corpus. Records are shuffled and numbered so ids
/// carry no entity information.
pub fn synthesize_corpus(spec: &SynthSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = Pools::new(spec.entity_count, &mut rng);
    let mut raw: Vec<(usize, Vec<Option<String>>)> = Vec::new();
    for e in 0..spec.entity_count {
        let source = pools.entity(&mut rng);
        raw.push((e, source.iter().cloned().map(Some).collect()));
        for _ in 0..spec.duplicates_per_entity {
            raw.push((e, corrupt(&source, spec, &mut rng)));
        }
    }
    raw.shuffle(&mut rng);
    let width = raw.len().max(1).to_string().len();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); spec.entity_count];
    let mut records = Vec::with_capacity(raw.len());
    for (i, (e, values)) in raw.into_iter().enumerate() {
        let id = format!("r{i:0width$}");
        members[e].push(id.clone());
        let values = if spec.regime == Regime::Unstructured {
            let text: Vec<String> = values.into_iter().flatten().collect();
            vec![(!text.is_empty()).then(|| text.join(" "))]
        } else {
            values
        };
        records.push((id, values));
    }
    let mut labels = Vec::new();
    for ids in &members {
        for (x, a) in ids.iter().enumerate() {
            for b in &ids[x + 1..] {
                labels.push(if a <= b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                });
            }
        }
    }
    labels.sort();
    let schema = if spec.regime == Regime::Unstructured {
        vec!["text".to_owned()]
    } else {
        STRUCTURED_SCHEMA.iter().map(|s| s.to_string()).collect()
    };
    Ok(SyntheticCorpus {
        schema,
        records,
        labels,
        regime: spec.regime,
    })
}

pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<(Dataset, LabelSet)> {
    synthesize_corpus(spec, seed)?.to_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_duplicates_are_copies() {
        let c = synthesize_corpus(&SynthSpec::noiseless(50, 2), 1).unwrap();
        assert_eq!(c.records.len(), 150);
        assert_eq!(c.labels.len(), 150);
        let by_id: std::collections::HashMap<_, _> = c.records.iter().map(|(i, v)| (i.clone(), v.clone())).collect();
        for (a, b) in &c.labels {
            assert_eq!(by_id[a], by_id[b]);
        }
    }

    #[test]
    fn counts_match_entities() {
        let (ds, labels) = synthesize(&SynthSpec::preset(Regime::Dirty, 1000), 3).unwrap();
        assert_eq!(ds.n(), 3000);
        assert_eq!(labels.len(), 3000);
    }

    #[test]
    fn full_typo_rate_changes_every_duplicate() {
        let spec = SynthSpec {
            typo_rate: 1.0,
            ..SynthSpec::noiseless(200, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pools = Pools::new(200, &mut rng);
        for _ in 0..200 {
            let source = pools.entity(&mut rng);
            let dup = corrupt(&source, &spec, &mut rng);
            for (s, d) in source.iter().zip(&dup) {
                assert_ne!(Some(s), d.as_ref());
            }
        }
    }

    #[test]
    fn typo_is_one_edit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let t = typo("blowin in the wind", &mut rng);
            assert_ne!(t, "blowin in the wind");
            let diff = (t.len() as i64 - "blowin in the wind".len() as i64).abs();
            assert!(diff <= 2, "{t}");
        }
    }

    #[test]
    fn reproducible_and_unstructured() {
        let spec = SynthSpec::preset(Regime::Unstructured, 30);
        let a = synthesize_corpus(&spec, 8).unwrap();
        assert_eq!(a, synthesize_corpus(&spec, 8).unwrap());
        assert_eq!(a.schema, vec!["text"]);
        assert!(a.records.iter().all(|(_, v)| v.len() == 1));
    }
}
