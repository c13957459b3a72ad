//! Command-line interface.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{DataConfig, ExperimentConfig, RunConfig, Splits, Transform};

use crate::baselines::{
    br_evaluate, br_predict, br_train_with_labels, BrConfig, BrModel, Preset, KIND_BINARY_RELEVANCE,
};
use crate::data::{
    filter_long, load_corpus, remove_top_k, save_corpus, shuffle_labels, split, synth_generate,
    uncorrelated_subset, write_provenance, CorpusStats, LabelFrequencies, LabelVocab, Provenance,
    Sample, SplitRatios, SynthSpec, DEFAULT_MAX_CORR,
};
use crate::decoding::{greedy_decode, PredictionRecord};
use crate::error::Error;
use crate::metrics::EvalReport;
use crate::model::{Checkpoint, Model, KIND_SEQ2SET};
use crate::training::{evaluate, prepare_dataset, train, Example, ValidationEvent};

#[derive(Debug, Parser)]
#[command(
    name = "seq2set",
    version,
    about = "Sequence-to-set multi-label text classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Greedy-decode a labelled corpus and score it.
    Evaluate(EvaluateArgs),
    /// Write predictions for the texts of a corpus.
    Predict(PredictArgs),
    /// Create and inspect datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Binary relevance baseline.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled corpus to score.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Decode length bound; defaults to the one used in training.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Shuffle gold label order before scoring (metrics are set-based).
    #[arg(long)]
    pub labels_shuffled: bool,
    /// Seed recorded in the report and used by `--labels-shuffled`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Records with `text` and optional `id` and `labels`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output predictions file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Generate a synthetic corpus from a TOML spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle each sample's stored label order.
    ShuffleLabels {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove the k most frequent labels.
    RemoveTopK {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep a label subset with bounded pairwise correlation.
    Uncorrelated {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_CORR)]
        max_corr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split into train, validation and test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train: f64,
        #[arg(long, default_value_t = 0.1)]
        val: f64,
        #[arg(long, default_value_t = 0.1)]
        test: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Train one logistic-regression classifier per label.
    BrTrain {
        /// Training corpus.
        #[arg(long)]
        data: PathBuf,
        /// Extra corpora whose labels join the label vocabulary.
        #[arg(long)]
        labels_from: Vec<PathBuf>,
        /// TOML file with BR settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a binary relevance checkpoint.
    BrEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A command failure and its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(format!("configuration error: {m}")),
            e => Failure::Runtime(e),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Data(c) => cmd_data(c),
        Command::Baseline(c) => cmd_baseline(c),
    }
}

fn require_file(p: &Path) -> CmdResult {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "input file not found: {}",
            p.display()
        )))
    }
}

/// Creates `dir`, refusing one that already holds files.
fn fresh_dir(dir: &Path) -> CmdResult {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(Error::from)?.next().is_some();
        if occupied {
            return Err(Failure::Usage(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CmdResult {
    let mut w = BufWriter::new(File::create(path).map_err(Error::from)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        w.write_all(b"\n").map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> CmdResult {
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn load_splits(cfg: &RunConfig) -> std::result::Result<Splits, Failure> {
    let load = |p: &Path| -> std::result::Result<Vec<Sample>, Failure> {
        Ok(filter_long(load_corpus(p)?, cfg.data.max_words).kept)
    };
    let mut splits = Splits {
        train: load(&cfg.data.train)?,
        val: load(&cfg.data.val)?,
        test: cfg.data.test.as_deref().map(load).transpose()?,
    };
    for t in &cfg.experiment.transforms {
        splits.apply(t)?;
    }
    Ok(splits)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    seed: u64,
    config_hash: &'a str,
    preset: Option<Preset>,
    train_samples: usize,
    val_samples: usize,
    num_labels: usize,
    vocab_size: usize,
    updates: usize,
    best_step: usize,
    best_val_micro_f1: f64,
    max_len: usize,
    diverged: Option<String>,
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    require_file(&a.config)?;
    let cfg = RunConfig::load(&a.config, a.preset, a.seed)?;
    for p in [
        Some(&cfg.data.train),
        Some(&cfg.data.val),
        cfg.data.test.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        require_file(p)?;
    }
    let splits = load_splits(&cfg)?;
    let data = prepare_dataset(
        &splits.train,
        &splits.val,
        cfg.architecture.vocab_cap,
        cfg.data.label_order,
    )?;
    let test: Option<Vec<Example>> = splits
        .test
        .as_ref()
        .map(|t| {
            t.iter()
                .map(|s| Example::from_sample(s, &data.vocab, &data.labels))
                .collect()
        })
        .transpose()?;
    let hash = cfg.hash()?;

    fresh_dir(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?).map_err(Error::from)?;
    let mut log = BufWriter::new(File::create(a.out.join("train_log.jsonl")).map_err(Error::from)?);
    let mut log_err = None;
    let mut observer = |ev: &ValidationEvent| {
        let res = serde_json::to_writer(&mut log, ev)
            .map_err(Error::from)
            .and_then(|_| log.write_all(b"\n").map_err(Error::from))
            .and_then(|_| log.flush().map_err(Error::from));
        if let Err(e) = res {
            log_err.get_or_insert(e);
        }
    };
    let outcome = train(&cfg.architecture, &cfg.training, &data, &mut observer)?;
    if let Some(e) = log_err {
        return Err(e.into());
    }

    let mut ckpt = Checkpoint::from_model(
        &outcome.best,
        &data.vocab,
        &data.labels,
        outcome.best_step,
        Some(outcome.best_val_f1),
    )?;
    ckpt.meta.max_len = Some(outcome.max_len);
    ckpt.meta.seed = Some(cfg.training.seed);
    ckpt.meta.config_hash = Some(hash.clone());
    ckpt.save(a.out.join("checkpoint"))?;

    write_json(
        &a.out.join("summary.json"),
        &TrainSummary {
            seed: cfg.training.seed,
            config_hash: &hash,
            preset: cfg.experiment.preset,
            train_samples: data.train.len(),
            val_samples: data.val.len(),
            num_labels: data.labels.len(),
            vocab_size: data.vocab.len(),
            updates: outcome.updates,
            best_step: outcome.best_step,
            best_val_micro_f1: outcome.best_val_f1,
            max_len: outcome.max_len,
            diverged: outcome.diverged.as_ref().map(|e| e.to_string()),
        },
    )?;

    if let Some(test) = &test {
        let eval = evaluate(&outcome.best, test, outcome.max_len)?;
        let mut report = eval.report;
        report.config_hash = Some(hash.clone());
        report.seed = Some(cfg.training.seed);
        write_report(&a.out.join("test_report.json"), &report)?;
        let records = prediction_records(
            test.iter().map(|e| e.id.as_str()),
            &eval.traces,
            &data.labels,
        );
        write_jsonl(&a.out.join("test_predictions.jsonl"), &records)?;
    }
    match outcome.diverged {
        Some(e) => Err(Failure::Runtime(e)),
        None => Ok(()),
    }
}

fn prediction_records<'a>(
    ids: impl Iterator<Item = &'a str>,
    traces: &[crate::decoding::DecodeTrace],
    labels: &LabelVocab,
) -> Vec<PredictionRecord> {
    ids.zip(traces)
        .map(|(id, t)| PredictionRecord {
            id: id.to_string(),
            labels: t
                .labels()
                .iter()
                .map(|&l| labels.name(l).unwrap_or("?").to_string())
                .collect(),
            log_probs: t.log_probs.clone(),
        })
        .collect()
}

enum Loaded {
    Neural { model: Model<f32>, ckpt: Checkpoint },
    Br(BrModel),
}

fn load_checkpoint(dir: &Path) -> std::result::Result<Loaded, Failure> {
    if !dir.join("meta.json").is_file() {
        return Err(Failure::Usage(format!(
            "no checkpoint at {}",
            dir.display()
        )));
    }
    let ckpt = Checkpoint::load(dir)?;
    match ckpt.meta.kind.as_str() {
        KIND_SEQ2SET => Ok(Loaded::Neural {
            model: ckpt.to_model()?,
            ckpt,
        }),
        KIND_BINARY_RELEVANCE => Ok(Loaded::Br(BrModel::from_checkpoint(&ckpt)?)),
        other => Err(Failure::Runtime(Error::Checkpoint(format!(
            "unknown checkpoint kind `{other}`"
        )))),
    }
}

fn decode_bound(
    ckpt: &Checkpoint,
    model: &Model<f32>,
    flag: Option<usize>,
) -> std::result::Result<usize, Failure> {
    let len = flag.or(ckpt.meta.max_len).unwrap_or(model.num_labels() + 1);
    if len == 0 {
        return Err(Failure::Usage("--max-len must be positive".into()));
    }
    Ok(len)
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    require_file(&a.data)?;
    let loaded = load_checkpoint(&a.checkpoint)?;
    let mut samples = load_corpus(&a.data)?;
    if a.labels_shuffled {
        samples = shuffle_labels(&samples, a.seed.unwrap_or(0));
    }
    let (mut report, records) = match &loaded {
        Loaded::Neural { model, ckpt } => {
            let max_len = decode_bound(ckpt, model, a.max_len)?;
            let examples: Vec<Example> = samples
                .iter()
                .map(|s| Example::from_sample(s, &ckpt.vocab, &ckpt.labels))
                .collect::<crate::Result<_>>()?;
            let eval = evaluate(model, &examples, max_len)?;
            let records = prediction_records(
                examples.iter().map(|e| e.id.as_str()),
                &eval.traces,
                &ckpt.labels,
            );
            let mut report = eval.report;
            report.config_hash = ckpt.meta.config_hash.clone();
            report.seed = ckpt.meta.seed;
            (report, records)
        }
        Loaded::Br(m) => br_outputs(m, &samples)?,
    };
    if a.seed.is_some() {
        report.seed = a.seed;
    }
    fresh_dir(&a.out)?;
    write_report(&a.out.join("report.json"), &report)?;
    write_jsonl(&a.out.join("predictions.jsonl"), &records)?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn br_outputs(
    m: &BrModel,
    samples: &[Sample],
) -> std::result::Result<(EvalReport, Vec<PredictionRecord>), Failure> {
    let report = br_evaluate(m, samples)?;
    let records = samples
        .iter()
        .map(|s| PredictionRecord {
            id: s.id.clone(),
            labels: br_predict(m, &s.text)
                .into_iter()
                .map(|l| m.labels.names()[l].clone())
                .collect(),
            log_probs: Vec::new(),
        })
        .collect();
    Ok((report, records))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    #[allow(dead_code)]
    labels: Option<Vec<String>>,
}

fn load_texts(path: &Path) -> crate::Result<Vec<(String, Vec<String>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let id = rec.id.unwrap_or_else(|| out.len().to_string());
        out.push((id, rec.text.split_whitespace().map(String::from).collect()));
    }
    Ok(out)
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    require_file(&a.data)?;
    let loaded = load_checkpoint(&a.checkpoint)?;
    let texts = load_texts(&a.data)?;
    let records: Vec<PredictionRecord> = match &loaded {
        Loaded::Neural { model, ckpt } => {
            let max_len = decode_bound(ckpt, model, a.max_len)?;
            let mut records = Vec::with_capacity(texts.len());
            for (id, words) in &texts {
                let mut tokens = ckpt.vocab.encode(words);
                if tokens.is_empty() {
                    tokens.push(crate::data::Vocabulary::UNK);
                }
                let t = greedy_decode(model, &tokens, max_len)?;
                records.extend(prediction_records(
                    std::iter::once(id.as_str()),
                    &[t],
                    &ckpt.labels,
                ));
            }
            records
        }
        Loaded::Br(m) => texts
            .iter()
            .map(|(id, words)| PredictionRecord {
                id: id.clone(),
                labels: br_predict(m, words)
                    .into_iter()
                    .map(|l| m.labels.names()[l].clone())
                    .collect(),
                log_probs: Vec::new(),
            })
            .collect(),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_jsonl(&a.out, &records)
}

fn derived(
    out: &Path,
    op: &str,
    parameters: serde_json::Value,
    seed: Option<u64>,
    input: Option<&Path>,
    files: &[(&str, &[Sample])],
) -> CmdResult {
    fresh_dir(out)?;
    for (name, samples) in files {
        save_corpus(out.join(name), samples)?;
    }
    write_provenance(
        out,
        &Provenance {
            operation: op.into(),
            parameters,
            seed,
            inputs: input.map(|p| p.display().to_string()).into_iter().collect(),
            outputs: files.iter().map(|(n, _)| n.to_string()).collect(),
        },
    )?;
    Ok(())
}

fn cmd_data(c: DataCommand) -> CmdResult {
    match c {
        DataCommand::Synth { spec, seed, out } => {
            require_file(&spec)?;
            let text = fs::read_to_string(&spec).map_err(Error::from)?;
            let spec: SynthSpec = toml::from_str(&text)
                .map_err(|e| Failure::Usage(format!("synthetic spec: {}", e.message())))?;
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let corpus = synth_generate(&spec, seed)?;
            let params = serde_json::to_value(&spec).map_err(Error::from)?;
            derived(
                &out,
                "synth",
                params,
                Some(seed),
                None,
                &[("corpus.jsonl", &corpus.samples)],
            )
        }
        DataCommand::ShuffleLabels { input, seed, out } => {
            require_file(&input)?;
            let samples = shuffle_labels(&load_corpus(&input)?, seed);
            derived(
                &out,
                "shuffle_labels",
                json!({}),
                Some(seed),
                Some(&input),
                &[("corpus.jsonl", &samples)],
            )
        }
        DataCommand::RemoveTopK { input, k, out } => {
            require_file(&input)?;
            let (samples, removed) = remove_top_k(&load_corpus(&input)?, k)?;
            derived(
                &out,
                "remove_top_k",
                json!({"k": k, "removed": removed}),
                None,
                Some(&input),
                &[("corpus.jsonl", &samples)],
            )
        }
        DataCommand::Uncorrelated {
            input,
            max_corr,
            out,
        } => {
            require_file(&input)?;
            if !(0.0..=1.0).contains(&max_corr) {
                return Err(Failure::Usage(format!(
                    "--max-corr {max_corr} outside [0, 1]"
                )));
            }
            let u = uncorrelated_subset(&load_corpus(&input)?, max_corr)?;
            let params =
                json!({"max_corr": max_corr, "admitted": u.admitted, "max_abs_phi": u.max_abs_phi});
            derived(
                &out,
                "uncorrelated",
                params,
                None,
                Some(&input),
                &[("corpus.jsonl", &u.samples)],
            )
        }
        DataCommand::Split {
            input,
            seed,
            train,
            val,
            test,
            out,
        } => {
            require_file(&input)?;
            let ratios = SplitRatios { train, val, test };
            ratios
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let (tr, va, te) = split(&load_corpus(&input)?, ratios, seed)?;
            let params = serde_json::to_value(ratios).map_err(Error::from)?;
            derived(
                &out,
                "split",
                params,
                Some(seed),
                Some(&input),
                &[
                    ("train.jsonl", &tr),
                    ("val.jsonl", &va),
                    ("test.jsonl", &te),
                ],
            )
        }
        DataCommand::Stats { input } => {
            require_file(&input)?;
            let samples = load_corpus(&input)?;
            let stats = CorpusStats::of(&samples);
            let freqs = LabelFrequencies::count(&samples).ranked();
            let doc = json!({"stats": stats, "label_frequencies": freqs});
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).map_err(Error::from)?
            );
            Ok(())
        }
    }
}

fn cmd_baseline(c: BaselineCommand) -> CmdResult {
    match c {
        BaselineCommand::BrTrain {
            data,
            labels_from,
            config,
            out,
        } => {
            require_file(&data)?;
            for p in &labels_from {
                require_file(p)?;
            }
            let cfg = match &config {
                Some(p) => {
                    require_file(p)?;
                    let text = fs::read_to_string(p).map_err(Error::from)?;
                    toml::from_str::<BrConfig>(&text)
                        .map_err(|e| Failure::Usage(format!("baseline config: {}", e.message())))?
                }
                None => BrConfig::default(),
            };
            cfg.validate()?;
            let train = load_corpus(&data)?;
            let mut all = train.clone();
            for p in &labels_from {
                all.extend(load_corpus(p)?);
            }
            let labels = LabelVocab::build(&all)?;
            let model = br_train_with_labels(&train, &labels, &cfg)?;
            fresh_dir(&out)?;
            model.save(out.join("checkpoint"))?;
            fs::write(
                out.join("config.toml"),
                toml::to_string(&cfg)
                    .map_err(|e| Failure::Runtime(Error::Config(e.to_string())))?,
            )
            .map_err(Error::from)?;
            Ok(())
        }
        BaselineCommand::BrEval {
            checkpoint,
            data,
            out,
        } => {
            require_file(&data)?;
            let Loaded::Br(m) = load_checkpoint(&checkpoint)? else {
                return Err(Failure::Usage(format!(
                    "{} is not a binary relevance checkpoint",
                    checkpoint.display()
                )));
            };
            let (report, records) = br_outputs(&m, &load_corpus(&data)?)?;
            fresh_dir(&out)?;
            write_report(&out.join("report.json"), &report)?;
            write_jsonl(&out.join("predictions.jsonl"), &records)?;
            println!("{}", report.to_json()?);
            Ok(())
        }
    }
}
