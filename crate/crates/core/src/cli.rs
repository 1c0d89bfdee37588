//! Command-line surface. `main` parses [`Cli`] and calls [`run`].

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::baselines::{key_block, minhash_block, KeySpec};
use crate::blocking::{
    block_with_signatures, build_signature_index, check_schema, compute_signatures, pe_ratio, CandidateSet,
};
use crate::config::{Mode, RunConfig};
use crate::data::{load_labels, Dataset, InputFormat, LabelSet};
use crate::error::{Error, Result};
use crate::eval::{
    recall, report, run_experiment, summary_text, synthesize_corpus, write_metrics_csv, write_summary_csv,
    ExperimentConfig, MetricRow, Regime,
};
use crate::lsh::theory::LshTheoryParams;
use crate::model::SignatureModel;
use crate::training::train;

#[derive(Debug, Parser)]
#[command(
    name = "sigblock",
    version,
    about = "Learned multi-signature blocking for entity matching"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: every core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a signature model from labeled pairs.
    Train(TrainArgs),
    /// Emit candidate pairs with a trained model.
    Block(BlockArgs),
    /// Build and save one LSH index per signature.
    Index(IndexArgs),
    /// Score candidate files, or run repeated split experiments.
    Eval(EvalArgs),
    /// Run a comparison blocker.
    Baseline(BaselineArgs),
    /// Write a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Dump per-token attention weights.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Records (left table in bipartite mode).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Right table; switches to bipartite mode.
    #[arg(long)]
    pub right: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<InputFormat>,
    #[arg(long)]
    pub id_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Where to write the model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub max_signatures: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BlockArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Candidate CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub max_results: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Directory receiving `signature_<s>.idx` files.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Candidate CSVs to score; the file stem names the method.
    #[arg(long = "candidates")]
    pub candidates: Vec<PathBuf>,
    /// Split, train and score every configured method instead.
    #[arg(long, conflicts_with = "candidates")]
    pub experiment: bool,
    /// Metrics CSV (one row per method and repeat).
    #[arg(long)]
    pub output: PathBuf,
    /// Aggregated summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Method list for experiments, e.g. `autoblock(0.8)`.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Key,
    Minhash,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    pub method: BaselineKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// Key spec: `a`, `a|b` (any agrees) or `a+b` (all agree).
    #[arg(long)]
    pub key: Option<String>,
    /// Comma-separated attributes for MinHash (default: all).
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<String>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub duplicates: Option<usize>,
    /// Applies the regime's preset noise rates.
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Receives `records.csv` and `labels.csv`.
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Only this attribute.
    #[arg(long)]
    pub attribute: Option<String>,
    /// Only the first N tuples.
    #[arg(long)]
    pub limit: Option<usize>,
}

impl clap::ValueEnum for InputFormat {
    fn value_variants<'a>() -> &'a [Self] {
        &[InputFormat::Csv, InputFormat::Tsv, InputFormat::Jsonl]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            InputFormat::Csv => "csv",
            InputFormat::Tsv => "tsv",
            InputFormat::Jsonl => "jsonl",
        }))
    }
}

impl clap::ValueEnum for Regime {
    fn value_variants<'a>() -> &'a [Self] {
        &[Regime::Clean, Regime::Dirty, Regime::Unstructured]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

/// 2 for usage and configuration problems (including unreadable inputs),
/// 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Loads the config file (or defaults) and applies global flags.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if let Some(p) = &d.input {
        cfg.data.input = Some(p.clone());
    }
    if let Some(p) = &d.right {
        cfg.data.right = Some(p.clone());
        cfg.data.mode = Mode::Bipartite;
    }
    if d.format.is_some() {
        cfg.data.format = d.format;
    }
    if let Some(c) = &d.id_column {
        cfg.data.id_column = c.clone();
    }
}

fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Train(a) => {
            apply_data(&mut cfg, &a.data);
            if a.labels.is_some() {
                cfg.data.labels = a.labels.clone();
            }
            set(&mut cfg.training.seed, &a.seed);
            set(&mut cfg.training.max_iterations, &a.iterations);
            if a.max_signatures.is_some() {
                cfg.training.max_signatures = a.max_signatures;
            }
        }
        Command::Block(a) => {
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.blocking.theta, &a.theta);
            if a.max_results.is_some() {
                cfg.blocking.max_results = a.max_results;
            }
        }
        Command::Index(a) => apply_data(&mut cfg, &a.data),
        Command::Eval(a) => {
            apply_data(&mut cfg, &a.data);
            if a.labels.is_some() {
                cfg.data.labels = a.labels.clone();
            }
            if !a.methods.is_empty() {
                cfg.eval.methods = a.methods.clone();
            }
            set(&mut cfg.split.repeats, &a.repeats);
        }
        Command::Baseline(a) => {
            apply_data(&mut cfg, &a.data);
            set(&mut cfg.minhash.seed, &a.seed);
        }
        Command::Synth(a) => {
            if let Some(r) = a.regime {
                let n = cfg.synth.entity_count;
                cfg.synth = crate::eval::SynthSpec::preset(r, n);
            }
            set(&mut cfg.synth.entity_count, &a.entities);
            set(&mut cfg.synth.duplicates_per_entity, &a.duplicates);
        }
        Command::Inspect(a) => apply_data(&mut cfg, &a.data),
    }
    cfg.validate()?;
    if let Some(n) = cfg.workers {
        // Fails only if a global pool already exists (tests calling twice).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(&cfg, &a.model),
        Command::Block(a) => cmd_block(&cfg, &a.model, &a.output),
        Command::Index(a) => cmd_index(&cfg, &a.model, &a.output),
        Command::Eval(a) if a.experiment => cmd_experiment(&cfg, &a.output, a.summary.as_deref()),
        Command::Eval(a) => cmd_eval(&cfg, &a.candidates, &a.output, a.summary.as_deref()),
        Command::Baseline(a) => match a.method {
            BaselineKind::Key => {
                let spec = a
                    .key
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument("baseline key needs --key".into()))?
                    .parse()?;
                cmd_baseline_key(&cfg, &spec, &a.output)
            }
            BaselineKind::Minhash => cmd_baseline_minhash(&cfg, &a.attributes, a.theta.unwrap_or(0.4), &a.output),
        },
        Command::Synth(a) => cmd_synth(&cfg, a.seed, &a.output_dir),
        Command::Inspect(a) => cmd_inspect(&cfg, &a.model, &a.output, a.attribute.as_deref(), a.limit),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn labels_for(cfg: &RunConfig, dataset: &Dataset) -> Result<LabelSet> {
    let path = cfg
        .data
        .labels
        .as_deref()
        .ok_or_else(|| Error::Config("no label file given (--labels or data.labels)".into()))?;
    load_labels(path, dataset)
}

pub fn cmd_train(cfg: &RunConfig, model_path: &Path) -> Result<()> {
    let dataset = cfg.load_dataset()?;
    let labels = labels_for(cfg, &dataset)?;
    info!("training on {} tuples, {} label pairs", dataset.n(), labels.len());
    let start = Instant::now();
    let model = train(&dataset, &labels, cfg.initial_embedding()?, &cfg.encoder, &cfg.training)?;
    model.save(model_path)?;
    println!(
        "signatures {} wall_time_s {:.3} model {}",
        model.signature_count(),
        start.elapsed().as_secs_f64(),
        model_path.display()
    );
    Ok(())
}

fn load_model_for(cfg: &RunConfig, model_path: &Path) -> Result<(SignatureModel, Dataset)> {
    let model = SignatureModel::load(model_path)?;
    let dataset = cfg.load_dataset()?;
    check_schema(&dataset, &model)?;
    Ok((model, dataset))
}

pub fn cmd_block(cfg: &RunConfig, model_path: &Path, output: &Path) -> Result<()> {
    let (model, dataset) = load_model_for(cfg, model_path)?;
    let theory = LshTheoryParams::new(cfg.blocking.theta, cfg.blocking.theta_prime)?;
    info!(
        "theta {} theta' {} rho {:.4} (query time ~ n^rho)",
        theory.theta, theory.theta_prime, theory.rho_exponent
    );
    let start = Instant::now();
    let signatures = compute_signatures(&model, &dataset);
    let candidates = block_with_signatures(
        &dataset,
        &signatures,
        cfg.blocking.theta,
        &cfg.lsh,
        cfg.blocking.max_results,
    )?;
    let wall = start.elapsed().as_secs_f64();
    candidates.write_csv(create(output)?)?;
    let pe = if dataset.is_empty() {
        0.0
    } else {
        pe_ratio(&candidates, dataset.n())?
    };
    println!("candidates {} pe_ratio {pe:.4} wall_time_s {wall:.3}", candidates.len());
    Ok(())
}

pub fn cmd_index(cfg: &RunConfig, model_path: &Path, output: &Path) -> Result<()> {
    let (model, dataset) = load_model_for(cfg, model_path)?;
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let signatures = compute_signatures(&model, &dataset);
    for (s, vectors) in signatures.iter().enumerate() {
        let path = output.join(format!("signature_{s}.idx"));
        match build_signature_index(&dataset, vectors, s as u32, &cfg.lsh)? {
            Some((index, _)) => {
                index.save(&path)?;
                println!("signature {s} entries {} file {}", index.len(), path.display());
            }
            None => println!("signature {s} has no vectors; skipped"),
        }
    }
    Ok(())
}

fn write_report(rows: &[MetricRow], output: &Path, summary: Option<&Path>) -> Result<()> {
    write_metrics_csv(create(output)?, rows)?;
    let table = report(rows)?;
    if let Some(p) = summary {
        write_summary_csv(create(p)?, &table)?;
    }
    print!("{}", summary_text(&table));
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, candidate_files: &[PathBuf], output: &Path, summary: Option<&Path>) -> Result<()> {
    if candidate_files.is_empty() {
        return Err(Error::InvalidArgument(
            "eval needs --candidates files or --experiment".into(),
        ));
    }
    let dataset = cfg.load_dataset()?;
    let labels = labels_for(cfg, &dataset)?;
    let mut rows = Vec::new();
    for path in candidate_files {
        let candidates = CandidateSet::load(path)?;
        let method = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push(MetricRow {
            method,
            dataset: cfg.eval.dataset_name.clone(),
            regime: cfg.eval.regime.clone(),
            repeat: 0,
            recall: recall(&candidates, &labels)?,
            pe_ratio: pe_ratio(&candidates, dataset.n())?,
            wall_time_s: None,
        });
    }
    write_report(&rows, output, summary)
}

pub fn cmd_experiment(cfg: &RunConfig, output: &Path, summary: Option<&Path>) -> Result<()> {
    let dataset = cfg.load_dataset()?;
    let labels = labels_for(cfg, &dataset)?;
    let exp = ExperimentConfig {
        split: cfg.split.clone(),
        embedding: cfg.embedding.clone(),
        encoder: cfg.encoder.clone(),
        training: cfg.training.clone(),
        lsh: cfg.lsh.clone(),
        minhash: cfg.minhash.clone(),
        methods: cfg.methods()?,
    };
    let rows = run_experiment(&dataset, &labels, &cfg.eval.dataset_name, &cfg.eval.regime, &exp)?;
    write_report(&rows, output, summary)
}

fn finish_candidates(candidates: &CandidateSet, dataset: &Dataset, output: &Path, wall: f64) -> Result<()> {
    candidates.write_csv(create(output)?)?;
    let pe = if dataset.is_empty() {
        0.0
    } else {
        pe_ratio(candidates, dataset.n())?
    };
    println!("candidates {} pe_ratio {pe:.4} wall_time_s {wall:.3}", candidates.len());
    Ok(())
}

pub fn cmd_baseline_key(cfg: &RunConfig, spec: &KeySpec, output: &Path) -> Result<()> {
    let dataset = cfg.load_dataset()?;
    let start = Instant::now();
    let c = key_block(&dataset, spec)?;
    finish_candidates(&c, &dataset, output, start.elapsed().as_secs_f64())
}

pub fn cmd_baseline_minhash(cfg: &RunConfig, attributes: &[String], theta: f64, output: &Path) -> Result<()> {
    let dataset = cfg.load_dataset()?;
    let attrs: Vec<&str> = if attributes.is_empty() {
        dataset.schema().iter().map(String::as_str).collect()
    } else {
        attributes.iter().map(String::as_str).collect()
    };
    let start = Instant::now();
    let c = minhash_block(&dataset, &attrs, theta, &cfg.minhash)?;
    finish_candidates(&c, &dataset, output, start.elapsed().as_secs_f64())
}

pub fn cmd_synth(cfg: &RunConfig, seed: u64, output_dir: &Path) -> Result<()> {
    let corpus = synthesize_corpus(&cfg.synth, seed)?;
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let records = output_dir.join("records.csv");
    let labels = output_dir.join("labels.csv");
    corpus.write_records(create(&records)?)?;
    corpus.write_labels(create(&labels)?)?;
    println!(
        "records {} labels {} dir {}",
        corpus.records.len(),
        corpus.labels.len(),
        output_dir.display()
    );
    Ok(())
}

pub fn cmd_inspect(
    cfg: &RunConfig,
    model_path: &Path,
    output: &Path,
    attribute: Option<&str>,
    limit: Option<usize>,
) -> Result<()> {
    let (model, dataset) = load_model_for(cfg, model_path)?;
    let attrs: Vec<usize> = match attribute {
        Some(name) => vec![dataset
            .attribute_index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("attribute `{name}` is not in the schema")))?],
        None => (0..dataset.attribute_count()).collect(),
    };
    let mut w = csv::Writer::from_writer(create(output)?);
    w.write_record(["id", "attribute", "weights"])?;
    for t in dataset.tuples().iter().take(limit.unwrap_or(usize::MAX)) {
        for &j in &attrs {
            let weights = model.encoders[j].token_weights(&model.embedding, &t.attributes[j]);
            let cell = weights
                .iter()
                .map(|(tok, b)| format!("{tok}:{b:.6}"))
                .collect::<Vec<_>>()
                .join(" ");
            w.write_record([&*t.record_id, dataset.schema()[j].as_str(), cell.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok(())
}
