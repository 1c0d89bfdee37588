use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sigblock::tokenize::tokenize;

const TINY: &str = "
[embedding]
dim = 16
bucket_count = 4096
[encoder]
hidden_size = 4
[training]
max_iterations = 30
batch_size = 8
negatives_per_pair = 5
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sigblock"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).env("RUST_LOG", "warn").output().unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 100 tuples: 20 labeled pairs with small edits plus 60 singletons.
fn fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    const WORDS: [&str; 16] = [
        "river", "golden", "night", "stone", "silver", "wild", "rose", "train", "summer", "ocean", "shadow", "honey",
        "storm", "echo", "garden", "fever",
    ];
    let word = |i: usize| WORDS[i % WORDS.len()];
    let mut rows = String::from("id,title,artist\n");
    let mut labels = String::from("id_a,id_b\n");
    for i in 0..20 {
        let title = format!("{} {} {}", word(i), word(i * 7 + 3), word(i * 3 + 1));
        let artist = format!("artist{i} band");
        rows.push_str(&format!("p{i:02},{title},{artist}\n"));
        rows.push_str(&format!("q{i:02},{title} [remix],{artist}\n"));
        labels.push_str(&format!("p{i:02},q{i:02}\n"));
    }
    for i in 0..60 {
        rows.push_str(&format!("s{i:02},{} {},solo{i}\n", word(i * 5 + 2), word(i + 9)));
    }
    let records = dir.join("records.csv");
    let label_path = dir.join("labels.csv");
    let config = dir.join("tiny.toml");
    std::fs::write(&records, rows).unwrap();
    std::fs::write(&label_path, labels).unwrap();
    std::fs::write(&config, TINY).unwrap();
    (records, label_path, config)
}

#[test]
fn train_is_reproducible_and_fast() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, config) = fixture(dir.path());
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let start = Instant::now();
    for m in [&a, &b] {
        ok(&[
            "train",
            "--config",
            s(&config),
            "--input",
            s(&records),
            "--labels",
            s(&labels),
            "--model",
            s(m),
        ]);
    }
    assert!(start.elapsed().as_secs() < 120);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.bin");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--model",
        s(&c),
        "--seed",
        "9",
    ]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn missing_label_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (records, _, config) = fixture(dir.path());
    let missing = dir.path().join("no_labels.csv");
    let out = run(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&missing),
        "--model",
        "m.bin",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_labels.csv"));
}

#[test]
fn bad_config_fields_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[training]\nbatch_sise = 3\n").unwrap();
    let out = run(&["synth", "--config", s(&cfg), "--output-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_sise"));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn block_is_monotone_in_theta_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, config) = fixture(dir.path());
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--model",
        s(&model),
    ]);
    let out = |name: &str| dir.path().join(name);
    let block = |theta: &str, o: &Path| {
        ok(&[
            "block",
            "--config",
            s(&config),
            "--model",
            s(&model),
            "--input",
            s(&records),
            "--output",
            s(o),
            "--theta",
            theta,
        ])
    };
    let summary = block("0.8", &out("c80.csv"));
    assert!(summary.starts_with("candidates "), "{summary}");
    block("0.8", &out("c80b.csv"));
    block("0.99", &out("c99.csv"));
    let read = |p: PathBuf| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(out("c80.csv")), read(out("c80b.csv")));
    let pairs = |p: PathBuf| -> BTreeSet<String> {
        read(p)
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
            .collect()
    };
    let (p80, p99) = (pairs(out("c80.csv")), pairs(out("c99.csv")));
    assert!(p99.is_subset_of(&p80));
    assert!(p99.len() <= p80.len());
}

trait Subset {
    fn is_subset_of(&self, other: &Self) -> bool;
}

impl Subset for BTreeSet<String> {
    fn is_subset_of(&self, other: &Self) -> bool {
        self.is_subset(other)
    }
}

#[test]
fn empty_dataset_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, config) = fixture(dir.path());
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--model",
        s(&model),
    ]);
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "id,title,artist\n").unwrap();
    let out = dir.path().join("c.csv");
    ok(&["block", "--model", s(&model), "--input", s(&empty), "--output", s(&out)]);
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "id_a,id_b,signature_id,cosine\n"
    );
}

#[test]
fn schema_mismatch_lists_attribute_differences() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, config) = fixture(dir.path());
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--model",
        s(&model),
    ]);
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "id,title,album\nx,a b,c\n").unwrap();
    let out = run(&[
        "block",
        "--model",
        s(&model),
        "--input",
        s(&other),
        "--output",
        s(&dir.path().join("c.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("artist") && err.contains("album"), "{err}");
}

#[test]
fn eval_scores_candidate_files() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, _) = fixture(dir.path());
    let exact = dir.path().join("exact.csv");
    std::fs::copy(&labels, &exact).unwrap();
    // Hand count: 15 of the 20 labeled pairs.
    let partial = dir.path().join("partial.csv");
    let mut text = String::from("id_a,id_b\n");
    for i in 0..15 {
        text.push_str(&format!("p{i:02},q{i:02}\n"));
    }
    text.push_str("s01,s02\n");
    std::fs::write(&partial, text).unwrap();
    let metrics = dir.path().join("metrics.csv");
    let summary = dir.path().join("summary.csv");
    ok(&[
        "eval",
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--candidates",
        s(&exact),
        "--candidates",
        s(&partial),
        "--output",
        s(&metrics),
        "--summary",
        s(&summary),
    ]);
    let rows: Vec<Vec<String>> = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(
        rows[0].join(","),
        "method,dataset,regime,repeat,recall,pe_ratio,wall_time_s"
    );
    assert_eq!(rows[1][0], "exact");
    assert_eq!(rows[1][4].parse::<f64>().unwrap(), 1.0);
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 20.0 / 100.0);
    assert_eq!(rows[2][4].parse::<f64>().unwrap(), 0.75);
    assert_eq!(rows[2][5].parse::<f64>().unwrap(), 16.0 / 100.0);
    assert!(summary.exists());
}

#[test]
fn experiment_writes_one_row_per_method_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, _) = fixture(dir.path());
    let metrics = dir.path().join("metrics.csv");
    ok(&[
        "eval",
        "--experiment",
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--method",
        "key(title)",
        "--method",
        "minhash(all,0.4)",
        "--repeats",
        "5",
        "--output",
        s(&metrics),
    ]);
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 1 + 10);
}

#[test]
fn synth_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--entities",
            "1000",
            "--duplicates",
            "2",
            "--seed",
            "4",
            "--output-dir",
            s(d),
        ]);
    }
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(&a, "records.csv"), read(&b, "records.csv"));
    assert_eq!(read(&a, "labels.csv"), read(&b, "labels.csv"));
    assert_eq!(read(&a, "records.csv").lines().count(), 1 + 3000);
    assert_eq!(read(&a, "labels.csv").lines().count(), 1 + 3000);
}

#[test]
fn noiseless_synth_duplicates_equal_originals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("clean.toml");
    std::fs::write(
        &cfg,
        "[synth]\nentity_count = 50\nduplicates_per_entity = 2\ntypo_rate = 0.0\ntoken_drop_rate = 0.0\n\
         missing_attr_rate = 0.0\nattr_swap_rate = 0.0\nversion_suffix_rate = 0.0\n",
    )
    .unwrap();
    ok(&["synth", "--config", s(&cfg), "--output-dir", s(dir.path())]);
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let by_id: std::collections::HashMap<&str, &str> =
        records.lines().skip(1).map(|l| l.split_once(',').unwrap()).collect();
    let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    for l in labels.lines().skip(1) {
        let (a, b) = l.split_once(',').unwrap();
        assert_eq!(by_id[a], by_id[b]);
    }
}

#[test]
fn key_baseline_pairs_exact_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.csv");
    std::fs::write(&records, "id,title,artist\n1,same song,x\n2,same song,y\n3,other,x\n").unwrap();
    let out = dir.path().join("k.csv");
    ok(&[
        "baseline",
        "key",
        "--key",
        "title",
        "--input",
        s(&records),
        "--output",
        s(&out),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "id_a,id_b\n1,2\n");
    let out = run(&["baseline", "key", "--input", s(&records), "--output", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["baseline", "lsh", "--input", s(&records), "--output", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn minhash_high_threshold_is_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let (records, _, _) = fixture(dir.path());
    let pairs = |theta: &str| -> BTreeSet<String> {
        let out = dir.path().join(format!("mh{theta}.csv"));
        ok(&[
            "baseline",
            "minhash",
            "--theta",
            theta,
            "--input",
            s(&records),
            "--output",
            s(&out),
        ]);
        std::fs::read_to_string(&out)
            .unwrap()
            .lines()
            .skip(1)
            .map(String::from)
            .collect()
    };
    let (hi, lo) = (pairs("0.99"), pairs("0.5"));
    assert!(hi.is_subset(&lo));
    assert!(lo.len() > hi.len());
}

/// Tokens plus contiguous token n-grams of length 2 and 3.
fn oracle_set(text: &str) -> BTreeSet<String> {
    let toks: Vec<String> = tokenize(text).tokens().to_vec();
    let mut set = BTreeSet::new();
    for n in 1..=3 {
        for w in toks.windows(n) {
            set.insert(w.join(" "));
        }
    }
    set
}

#[test]
fn minhash_pairs_misspelled_title_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.csv");
    std::fs::write(
        &records,
        "id,title,album,composer\n\
         3,Blowin' in the Wind,The Freewheelin' Bob Dylan,Bob Dylan\n\
         4,Blowing in the Wind,,Bob Dylan\n\
         5,Like a Rolling Stone,Highway 61 Revisited,Bob Dylan Band\n",
    )
    .unwrap();
    let j = |a: &str, b: &str| {
        let (x, y) = (oracle_set(a), oracle_set(b));
        x.intersection(&y).count() as f64 / x.union(&y).count() as f64
    };
    let best = j("Blowin' in the Wind", "Blowing in the Wind").max(j("Bob Dylan", "Bob Dylan"));
    assert!(best >= 0.6);
    let out = dir.path().join("mh.csv");
    ok(&[
        "baseline",
        "minhash",
        "--theta",
        "0.6",
        "--input",
        s(&records),
        "--output",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l == "3,4"), "{text}");
    let out = dir.path().join("key.csv");
    ok(&[
        "baseline",
        "key",
        "--key",
        "title",
        "--input",
        s(&records),
        "--output",
        s(&out),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "id_a,id_b\n");
}

#[test]
fn inspect_and_index_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels, config) = fixture(dir.path());
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--config",
        s(&config),
        "--input",
        s(&records),
        "--labels",
        s(&labels),
        "--model",
        s(&model),
    ]);
    let att = dir.path().join("att.csv");
    ok(&[
        "inspect",
        "--model",
        s(&model),
        "--input",
        s(&records),
        "--output",
        s(&att),
        "--attribute",
        "title",
        "--limit",
        "3",
    ]);
    let text = std::fs::read_to_string(&att).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let weights: f64 = lines[1]
        .rsplit(',')
        .next()
        .unwrap()
        .split(' ')
        .map(|tw| tw.rsplit_once(':').unwrap().1.parse::<f64>().unwrap())
        .sum();
    assert!((weights - 1.0).abs() < 1e-5);
    let idx = dir.path().join("idx");
    ok(&[
        "index",
        "--model",
        s(&model),
        "--input",
        s(&records),
        "--output",
        s(&idx),
    ]);
    assert!(idx.join("signature_0.idx").exists());
}
