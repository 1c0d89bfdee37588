//! Tuples, datasets, positive label sets, and delimited/JSON-lines ingestion.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::tokenize;

pub type RecordId = Arc<str>;

/// One attribute of a tuple as a token sequence. Zero tokens means missing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeValue {
    tokens: Vec<String>,
}

impl AttributeValue {
    /// Builds a value from already-tokenized text. Tokens are split on
    /// whitespace so the no-whitespace invariant holds for any input.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = tokens
            .into_iter()
            .flat_map(|t| t.as_ref().split_whitespace().map(str::to_owned).collect::<Vec<_>>())
            .collect();
        Self { tokens }
    }

    pub fn missing() -> Self {
        Self::default()
    }

    pub fn is_missing(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens joined by single spaces; empty for a missing value.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    pub record_id: RecordId,
    pub attributes: Vec<AttributeValue>,
}

impl Tuple {
    pub fn new(record_id: impl Into<RecordId>, attributes: Vec<AttributeValue>) -> Self {
        Self {
            record_id: record_id.into(),
            attributes,
        }
    }
}

/// One table (self-join) or two tables (bipartite) sharing a schema.
///
/// Tuples are addressed by a global index: the first table occupies
/// `0..n0`, the second `n0..n0 + n1`. Record ids must be unique across
/// all tables so candidate and label pairs can be keyed by id alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<String>,
    tuples: Vec<Tuple>,
    table_ends: Vec<usize>,
    id_index: HashMap<RecordId, usize>,
}

impl Dataset {
    pub fn self_join(schema: Vec<String>, tuples: Vec<Tuple>) -> Result<Self> {
        Self::from_tables(schema, vec![tuples])
    }

    pub fn bipartite(schema: Vec<String>, left: Vec<Tuple>, right: Vec<Tuple>) -> Result<Self> {
        Self::from_tables(schema, vec![left, right])
    }

    pub fn from_tables(schema: Vec<String>, tables: Vec<Vec<Tuple>>) -> Result<Self> {
        if tables.is_empty() || tables.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "a dataset holds one or two tables, got {}",
                tables.len()
            )));
        }
        let m = schema.len();
        let mut tuples = Vec::with_capacity(tables.iter().map(Vec::len).sum());
        let mut table_ends = Vec::with_capacity(tables.len());
        let mut id_index = HashMap::new();
        for table in tables {
            for t in table {
                if t.attributes.len() != m {
                    return Err(Error::InvalidArgument(format!(
                        "record `{}` has {} attributes, schema has {m}",
                        t.record_id,
                        t.attributes.len()
                    )));
                }
                if id_index.insert(t.record_id.clone(), tuples.len()).is_some() {
                    return Err(Error::DuplicateId(t.record_id.to_string()));
                }
                tuples.push(t);
            }
            table_ends.push(tuples.len());
        }
        Ok(Self {
            schema,
            tuples,
            table_ends,
            id_index,
        })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn attribute_count(&self) -> usize {
        self.schema.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a == name)
    }

    pub fn n(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn is_bipartite(&self) -> bool {
        self.table_ends.len() == 2
    }

    pub fn table_count(&self) -> usize {
        self.table_ends.len()
    }

    pub fn table_range(&self, table: usize) -> Range<usize> {
        let start = if table == 0 { 0 } else { self.table_ends[table - 1] };
        start..self.table_ends[table]
    }

    pub fn table_of(&self, index: usize) -> usize {
        self.table_ends.iter().position(|&end| index < end).unwrap_or(0)
    }

    pub fn tuple(&self, index: usize) -> &Tuple {
        &self.tuples[index]
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    /// Sub-dataset with the given global indices, keeping table membership
    /// and relative order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut tables = vec![Vec::new(); self.table_count()];
        for i in sorted {
            tables[self.table_of(i)].push(self.tuples[i].clone());
        }
        Dataset::from_tables(self.schema.clone(), tables).expect("subset of a valid dataset")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "tsv" | "tab" => Some(Self::Tsv),
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            Self::Tsv => b'\t',
            _ => b',',
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "tsv" => Ok(Self::Tsv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown input format `{other}`"))),
        }
    }
}

/// Reads one table. With `schema = None` the attribute list is every
/// header column except `id_column`, in file order (delimited formats only).
pub fn ingest_table(
    path: &Path,
    format: InputFormat,
    schema: Option<&[String]>,
    id_column: &str,
) -> Result<(Vec<String>, Vec<Tuple>)> {
    match format {
        InputFormat::Csv | InputFormat::Tsv => ingest_delimited(path, format.delimiter(), schema, id_column),
        InputFormat::Jsonl => {
            let schema =
                schema.ok_or_else(|| Error::InvalidArgument("a schema is required for JSON-lines input".into()))?;
            ingest_jsonl(path, schema, id_column).map(|t| (schema.to_vec(), t))
        }
    }
}

/// Reads a single-table (self-join) dataset.
pub fn ingest(path: &Path, format: InputFormat, schema: Option<&[String]>, id_column: &str) -> Result<Dataset> {
    let (schema, tuples) = ingest_table(path, format, schema, id_column)?;
    Dataset::self_join(schema, tuples)
}

fn ingest_delimited(
    path: &Path,
    delimiter: u8,
    schema: Option<&[String]>,
    id_column: &str,
) -> Result<(Vec<String>, Vec<Tuple>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(path, 0, e))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let column = |name: &str| header.iter().position(|h| h == name);
    let id_col = column(id_column).ok_or_else(|| Error::MalformedRow {
        path: path.to_owned(),
        row: 0,
        msg: format!("header lacks id column `{id_column}`"),
    })?;
    let schema: Vec<String> = match schema {
        Some(s) => s.to_vec(),
        None => header.iter().filter(|h| *h != id_column).cloned().collect(),
    };
    let cols = schema
        .iter()
        .map(|a| {
            column(a).ok_or_else(|| Error::MalformedRow {
                path: path.to_owned(),
                row: 0,
                msg: format!("header lacks attribute column `{a}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tuples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e))?;
        let id = rec.get(id_col).unwrap_or("").trim();
        if id.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_owned(),
                row,
                msg: "empty record id".into(),
            });
        }
        if !seen.insert(id.to_owned()) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
        let attributes = cols.iter().map(|&c| tokenize(rec.get(c).unwrap_or(""))).collect();
        tuples.push(Tuple::new(id, attributes));
    }
    Ok((schema, tuples))
}

fn malformed(path: &Path, row: usize, e: csv::Error) -> Error {
    Error::MalformedRow {
        path: path.to_owned(),
        row,
        msg: e.to_string(),
    }
}

fn json_text(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        // set-valued attributes are concatenated into one sequence
        Value::Array(items) => items.iter().map(json_text).collect::<Vec<_>>().join(" "),
        Value::Object(_) => v.to_string(),
    }
}

fn ingest_jsonl(path: &Path, schema: &[String], id_column: &str) -> Result<Vec<Tuple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tuples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::MalformedRow {
            path: path.to_owned(),
            row,
            msg,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| bad("expected a JSON object".into()))?;
        let id = obj.get(id_column).map(json_text).unwrap_or_default();
        if id.trim().is_empty() {
            return Err(bad(format!("missing id field `{id_column}`")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let attributes = schema
            .iter()
            .map(|a| obj.get(a).map(|v| tokenize(&json_text(v))).unwrap_or_default())
            .collect();
        tuples.push(Tuple::new(id.as_str(), attributes));
    }
    Ok(tuples)
}

/// Writes tuples as a delimited file with joined tokens as cell text.
pub fn export_delimited<W: Write>(
    writer: W,
    schema: &[String],
    id_column: &str,
    tuples: &[Tuple],
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let mut header = vec![id_column.to_owned()];
    header.extend(schema.iter().cloned());
    w.write_record(&header)?;
    for t in tuples {
        let mut row = vec![t.record_id.to_string()];
        row.extend(t.attributes.iter().map(AttributeValue::joined));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Orders a pair so the lexicographically smaller id comes first.
pub fn canonical_pair(a: &RecordId, b: &RecordId) -> (RecordId, RecordId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Known matching pairs, canonically ordered and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    pairs: BTreeSet<(RecordId, RecordId)>,
}

impl LabelSet {
    pub fn from_pairs<I, A, B>(pairs: I, dataset: &Dataset) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            let (a, b) = (a.as_ref(), b.as_ref());
            let ia = dataset.index_of(a).ok_or_else(|| Error::UnknownId(a.to_owned()))?;
            let ib = dataset.index_of(b).ok_or_else(|| Error::UnknownId(b.to_owned()))?;
            if ia == ib {
                return Err(Error::SelfPair(a.to_owned()));
            }
            let ra = &dataset.tuple(ia).record_id;
            let rb = &dataset.tuple(ib).record_id;
            set.insert(canonical_pair(ra, rb));
        }
        Ok(Self { pairs: set })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.contains(&(RecordId::from(a), RecordId::from(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(RecordId, RecordId)> {
        self.pairs.iter()
    }

    /// Pairs as global tuple indices of `dataset`; pairs with an id absent
    /// from it are skipped.
    pub fn index_pairs(&self, dataset: &Dataset) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter_map(|(a, b)| Some((dataset.index_of(a)?, dataset.index_of(b)?)))
            .collect()
    }

    /// Keeps only the pairs whose both ids satisfy `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> LabelSet {
        LabelSet {
            pairs: self.pairs.iter().filter(|(a, b)| keep(a) && keep(b)).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id_a", "id_b"])?;
        for (a, b) in &self.pairs {
            w.write_record([a.as_ref(), b.as_ref()])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// Reads a two-column label file with header `id_a,id_b` (tab-separated
/// when the extension is `.tsv`).
pub fn load_labels(path: &Path, dataset: &Dataset) -> Result<LabelSet> {
    let delimiter = match InputFormat::from_path(path) {
        Some(InputFormat::Tsv) => b'\t',
        _ => b',',
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let mut pairs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, i + 1, e))?;
        if rec.len() != 2 {
            return Err(Error::MalformedRow {
                path: path.to_owned(),
                row: i + 1,
                msg: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        pairs.push((rec[0].trim().to_owned(), rec[1].trim().to_owned()));
    }
    LabelSet::from_pairs(pairs, dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        (dir, p)
    }

    fn schema(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn blank_cell_is_missing() {
        let (_d, p) = write_tmp("a.csv", "id,title,album\n3,Blowin' in the Wind,\n");
        let ds = ingest(&p, InputFormat::Csv, None, "id").unwrap();
        assert_eq!(ds.n(), 1);
        let t = ds.tuple(0);
        assert_eq!(&*t.record_id, "3");
        assert!(!t.attributes[0].is_empty());
        assert!(t.attributes[1].is_missing());
    }

    #[test]
    fn header_only_is_empty() {
        let (_d, p) = write_tmp("a.csv", "id,title\n");
        let ds = ingest(&p, InputFormat::Csv, None, "id").unwrap();
        assert_eq!(ds.n(), 0);
    }

    #[test]
    fn duplicate_id_is_named() {
        let (_d, p) = write_tmp("a.csv", "id,title\nx,a\nx,b\n");
        match ingest(&p, InputFormat::Csv, None, "id") {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let (_d, p) = write_tmp("a.csv", "id,title\n1,a\n2,b,extra\n");
        match ingest(&p, InputFormat::Csv, None, "id") {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_with_set_valued_attribute() {
        let (_d, p) = write_tmp(
            "a.jsonl",
            "{\"id\": 1, \"title\": \"Hey Jude\", \"actors\": [\"A B\", \"C\"]}\n{\"id\": \"2\", \"title\": null}\n",
        );
        let ds = ingest(&p, InputFormat::Jsonl, Some(&schema(&["title", "actors"])), "id").unwrap();
        assert_eq!(ds.tuple(0).attributes[1].tokens(), ["a", "b", "c"]);
        assert!(ds.tuple(1).attributes[0].is_missing());
        assert!(ds.tuple(1).attributes[1].is_missing());
    }

    #[test]
    fn labels_are_canonical_and_deduplicated() {
        let ds = Dataset::self_join(
            schema(&["t"]),
            vec![
                Tuple::new("a", vec![tokenize("x")]),
                Tuple::new("b", vec![tokenize("y")]),
            ],
        )
        .unwrap();
        let labels = LabelSet::from_pairs([("a", "b"), ("b", "a"), ("a", "b")], &ds).unwrap();
        assert_eq!(labels.len(), 1);
        let (x, y) = labels.iter().next().unwrap();
        assert_eq!((&**x, &**y), ("a", "b"));
        assert!(matches!(
            LabelSet::from_pairs([("a", "a")], &ds),
            Err(Error::SelfPair(_))
        ));
        assert!(matches!(
            LabelSet::from_pairs([("a", "z")], &ds),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn bipartite_ids_must_be_globally_unique() {
        let l = vec![Tuple::new("a", vec![tokenize("x")])];
        let r = vec![Tuple::new("a", vec![tokenize("y")])];
        assert!(Dataset::bipartite(schema(&["t"]), l, r).is_err());
    }

    #[test]
    fn subset_keeps_tables() {
        let l = vec![
            Tuple::new("a", vec![tokenize("x")]),
            Tuple::new("b", vec![tokenize("x")]),
        ];
        let r = vec![Tuple::new("c", vec![tokenize("y")])];
        let ds = Dataset::bipartite(schema(&["t"]), l, r).unwrap();
        let sub = ds.subset(&[2, 0]);
        assert!(sub.is_bipartite());
        assert_eq!(sub.table_range(0), 0..1);
        assert_eq!(sub.table_range(1), 1..2);
        assert_eq!(sub.table_of(1), 1);
    }
}
