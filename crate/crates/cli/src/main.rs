use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascadecite::config::{load_config, PipelineConfig};
use cascadecite::encoding::EncodingSchema;
use cascadecite::ingest::{
    build_cascades, compute_stats, format_citation_files, parse_citation_files, Horizon, LabeledCascade,
    SyntheticCorpus,
};
use cascadecite::model::{DeepCcp, ModelCheckpoint, ModelConfig};
use cascadecite::probe::{flatten_sequence, probe, structural_features, ProbeConfig};
use cascadecite::train::{
    evaluate, fit, predict, prepare, sweep_time_interval, write_predictions, write_sweep, EncodedCascade,
};
use cascadecite::tree::to_tree;
use cascadecite::Error;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

mod run;

use run::{Run, MANIFEST};

/// Citation-count growth prediction from citation cascades.
#[derive(Parser)]
#[command(name = "cascadecite", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic citation corpus (raw edge/date files and labelled cascades).
    Synth(Common),
    /// Build labelled cascades from an edge list and a date list.
    Ingest {
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        dates: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Corpus statistics over tree-converted cascades.
    Stats {
        #[arg(long)]
        cascades: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert cascades to trees, encode degree sequences and split 70/15/15.
    Encode {
        #[arg(long)]
        cascades: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on an encoded dataset directory.
    Train {
        /// Directory written by `encode`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// MSLE of a trained model on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Per-cascade predictions as CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a regressor from degree vectors to structural features.
    Probe {
        #[arg(long)]
        cascades: PathBuf,
        /// Trained model whose decay weights scale the degree vectors.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain for several time-interval counts and tabulate test MSLE.
    Sweep {
        #[arg(long)]
        cascades: PathBuf,
        /// Comma-separated interval counts, overriding `sweep_bins`.
        #[arg(long, value_delimiter = ',')]
        bins_list: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation window in years.
    #[arg(long)]
    window_years: Option<f64>,
    /// Prediction horizon in days after the window, or `end`.
    #[arg(long)]
    horizon: Option<String>,
    /// Number of time intervals L.
    #[arg(long)]
    bins: Option<usize>,
    /// Drop cascades with fewer observed citers.
    #[arg(long)]
    min_observed: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Number of synthetic cascades.
    #[arg(long)]
    n_cascades: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn flags(&self) -> Result<Value> {
        let mut top = Map::new();
        let mut train = Map::new();
        if let Some(y) = self.window_years {
            top.insert("window_years".into(), json!(y));
        }
        if let Some(h) = &self.horizon {
            let h: Horizon = h.parse()?;
            top.insert("horizon".into(), serde_json::to_value(h)?);
        }
        if let Some(b) = self.bins {
            top.insert("bins".into(), json!(b));
        }
        if let Some(m) = self.min_observed {
            top.insert("min_observed".into(), json!(m));
        }
        if let Some(s) = self.seed {
            top.insert("seed".into(), json!(s));
        }
        if let Some(b) = self.batch_size {
            train.insert("batch_size".into(), json!(b));
        }
        if let Some(e) = self.max_epochs {
            train.insert("max_epochs".into(), json!(e));
        }
        if let Some(p) = self.patience {
            train.insert("patience".into(), json!(p));
        }
        if let Some(s) = self.step_size {
            train.insert("adam".into(), json!({ "step_size": s }));
        }
        if !train.is_empty() {
            top.insert("train".into(), Value::Object(train));
        }
        if let Some(n) = self.n_cascades {
            top.insert("synth".into(), json!({ "n_cascades": n }));
        }
        Ok(Value::Object(top))
    }

    fn start(&self, command: &str) -> Result<Run> {
        let cfg = load_config(self.config.as_deref(), self.flags()?)?;
        let mut run = Run::start(command, cfg, &self.out)?;
        if let Some(path) = &self.config {
            run.read(path)?;
        }
        Ok(run)
    }
}

/// Day 0 of synthetic corpora when written as dated files.
fn synthetic_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1992, 1, 1).expect("valid date")
}

fn synth(common: &Common) -> Result<()> {
    let mut run = common.start("synth")?;
    let corpus = SyntheticCorpus::grow(&run.config().synth)?;
    let (edges, dates) = format_citation_files(&corpus.citation_data(), synthetic_epoch())?;
    run.write("edges.txt", edges.as_bytes())?;
    run.write("dates.txt", dates.as_bytes())?;
    run.write_jsonl("cascades.jsonl", &corpus.labeled())?;
    run.finish()?;
    Ok(())
}

fn ingest(edges: &Path, dates: &Path, common: &Common) -> Result<()> {
    let mut run = common.start("ingest")?;
    let edges = run.read(edges)?;
    let dates = run.read(dates)?;
    let (data, epoch) = parse_citation_files(&edges, &dates)?;
    let cfg = run.config().clone();
    let cascades = build_cascades(&data, cfg.window_days, cfg.horizon, cfg.min_observed)?;
    log::info!("{} cascades (epoch {:?})", cascades.len(), epoch);
    run.write_jsonl("cascades.jsonl", &cascades)?;
    run.finish()?;
    Ok(())
}

fn stats(cascades: &Path, common: &Common) -> Result<()> {
    let mut run = common.start("stats")?;
    let cascades: Vec<LabeledCascade> = run.read_jsonl(cascades)?;
    let trees = cascades.iter().map(|c| to_tree(&c.cascade)).collect::<Result<Vec<_>, _>>()?;
    let stats = compute_stats(&trees)?;
    run.write_json("stats.json", &stats)?;
    run.finish()?;
    Ok(())
}

fn encode(cascades: &Path, common: &Common) -> Result<()> {
    let mut run = common.start("encode")?;
    let cascades: Vec<LabeledCascade> = run.read_jsonl(cascades)?;
    let cfg = run.config().clone();
    let prepared = prepare(&cascades, cfg.bins, cfg.seed)?;
    run.write_json("schema.json", &prepared.schema)?;
    run.write_jsonl("train.jsonl", &prepared.split.train)?;
    run.write_jsonl("val.jsonl", &prepared.split.val)?;
    run.write_jsonl("test.jsonl", &prepared.split.test)?;
    let records: Vec<_> = cascades
        .iter()
        .zip(&prepared.trees)
        .map(|(c, t)| t.to_record(c.cascade.root_time, c.cascade.window_t))
        .collect();
    run.write_jsonl("trees.jsonl", &records)?;
    run.finish()?;
    Ok(())
}

fn read_split(run: &mut Run, dir: &Path, split: &str) -> Result<Vec<EncodedCascade>> {
    if !["train", "val", "test"].contains(&split) {
        bail!(Error::Config(format!("split must be train, val or test, got `{split}`")));
    }
    run.read_jsonl(&dir.join(format!("{split}.jsonl")))
}

fn train(data: &Path, common: &Common) -> Result<()> {
    let mut run = common.start("train")?;
    let schema: EncodingSchema = run.read_json(&data.join("schema.json"))?;
    schema.validate()?;
    let split = cascadecite::ingest::Split {
        train: read_split(&mut run, data, "train")?,
        val: read_split(&mut run, data, "val")?,
        test: read_split(&mut run, data, "test")?,
    };
    let cfg = run.config().clone();
    if cfg.bins != schema.bin_count {
        log::warn!(
            "configured bins = {} but the encoded data uses {}; the data wins",
            cfg.bins,
            schema.bin_count
        );
    }
    let model = DeepCcp::new(ModelConfig::new(&cfg.model, &schema)?)?;
    let (params, report) = fit(&model, &split, &cfg.train)?;
    let mut ckpt = Vec::new();
    ModelCheckpoint::new(&model, &schema, &params).write_to(&mut ckpt)?;
    run.write("model.json", &ckpt)?;
    run.write("metrics.csv", report.metrics_csv().as_bytes())?;
    run.write_json("report.json", &json!({ "manifest": MANIFEST, "report": report }))?;
    run.finish()?;
    Ok(())
}

fn load_model(run: &mut Run, path: &Path) -> Result<(ModelCheckpoint, DeepCcp, cascadecite::model::ModelParams)> {
    let text = run.read(path)?;
    let ckpt = ModelCheckpoint::read_from(text.as_bytes()).context("parsing checkpoint")?;
    let (model, params) = ckpt.restore()?;
    Ok((ckpt, model, params))
}

fn check_schema(model: &EncodingSchema, data: &EncodingSchema) -> Result<()> {
    let diff = model.diff(data);
    if diff.is_empty() {
        Ok(())
    } else {
        bail!(Error::SchemaMismatch(diff.join("; ")))
    }
}

fn eval(model: &Path, data: &Path, split: &str, common: &Common) -> Result<()> {
    let mut run = common.start("eval")?;
    let (ckpt, model, params) = load_model(&mut run, model)?;
    let schema: EncodingSchema = run.read_json(&data.join("schema.json"))?;
    check_schema(&ckpt.schema, &schema)?;
    let cascades = read_split(&mut run, data, split)?;
    let msle = evaluate(&model, &params, &cascades)?;
    run.write_json("eval.json", &json!({ "manifest": MANIFEST, "split": split, "n": cascades.len(), "msle": msle }))?;
    run.finish()?;
    Ok(())
}

fn predict_cmd(model: &Path, data: &Path, split: &str, common: &Common) -> Result<()> {
    let mut run = common.start("predict")?;
    let (ckpt, model, params) = load_model(&mut run, model)?;
    let schema: EncodingSchema = run.read_json(&data.join("schema.json"))?;
    let cascades = read_split(&mut run, data, split)?;
    let preds = predict(&model, &params, &ckpt.schema, &schema, &cascades)?;
    let mut csv = Vec::new();
    write_predictions(&mut csv, &preds)?;
    run.write("predictions.csv", &csv)?;
    run.finish()?;
    Ok(())
}

fn probe_cmd(cascades: &Path, model: Option<&Path>, common: &Common) -> Result<()> {
    let mut run = common.start("probe")?;
    let cascades: Vec<LabeledCascade> = run.read_jsonl(cascades)?;
    let lambda = match model {
        Some(path) => Some(load_model(&mut run, path)?.2.lambda().data().to_vec()),
        None => None,
    };
    let cfg = run.config().clone();
    let trees: Vec<_> = cascades
        .iter()
        .map(|c| to_tree(&c.cascade))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|t| t.len() >= 2)
        .collect();
    let bins = lambda.as_ref().map_or(cfg.bins, |l| l.len() - 1);
    let window_t = cascades.first().map_or(cfg.window_days, |c| c.cascade.window_t);
    let schema = cascadecite::encoding::schema_from_corpus(&trees, bins, window_t)?;
    let vectors = trees
        .iter()
        .map(|t| flatten_sequence(&cascadecite::encoding::encode(t, &schema)?, lambda.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let features = trees.iter().map(structural_features).collect::<Result<Vec<_>, _>>()?;
    let real = probe(&vectors, &features, &cfg.probe)?;
    let control = probe(
        &vectors,
        &features,
        &ProbeConfig {
            shuffle_labels: true,
            ..cfg.probe.clone()
        },
    )?;
    run.write("probe.csv", real.to_csv().as_bytes())?;
    run.write_json(
        "probe.json",
        &json!({ "manifest": MANIFEST, "decayed": lambda.is_some(), "probe": real, "shuffled_control": control }),
    )?;
    run.finish()?;
    Ok(())
}

fn sweep(cascades: &Path, bins_list: Option<&[usize]>, common: &Common) -> Result<()> {
    let mut run = common.start("sweep")?;
    let cascades: Vec<LabeledCascade> = run.read_jsonl(cascades)?;
    let cfg: PipelineConfig = run.config().clone();
    let bins = bins_list.unwrap_or(&cfg.sweep_bins);
    let rows = sweep_time_interval(&cascades, bins, &cfg.model, &cfg.train)?;
    let mut csv = Vec::new();
    write_sweep(&mut csv, &rows)?;
    run.write("sweep.csv", &csv)?;
    run.finish()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(common) => synth(common),
        Command::Ingest { edges, dates, common } => ingest(edges, dates, common),
        Command::Stats { cascades, common } => stats(cascades, common),
        Command::Encode { cascades, common } => encode(cascades, common),
        Command::Train { data, common } => train(data, common),
        Command::Eval { model, data, split, common } => eval(model, data, split, common),
        Command::Predict { model, data, split, common } => predict_cmd(model, data, split, common),
        Command::Probe { cascades, model, common } => probe_cmd(cascades, model.as_deref(), common),
        Command::Sweep { cascades, bins_list, common } => sweep(cascades, bins_list.as_deref(), common),
    }
}

/// Machine-readable description of a failure.
fn error_json(err: &anyhow::Error) -> Value {
    let message = format!("{err:#}");
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::SchemaMismatch(diff)) => json!({
            "error": "schema_mismatch",
            "message": message,
            "diff": diff.split("; ").collect::<Vec<_>>(),
        }),
        Some(Error::Parse { line, .. }) => json!({ "error": "parse", "line": line, "message": message }),
        Some(e) => json!({ "error": e.kind(), "message": message }),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => json!({ "error": "io", "message": message }),
        None => json!({ "error": "internal", "message": message }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
