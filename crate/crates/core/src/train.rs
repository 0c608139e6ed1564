//! Mini-batch training with early stopping, evaluation, prediction files and
//! the time-interval sweep.

use std::io::{Read, Write};
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode, schema_from_corpus, DegreeSequence, EncodingSchema};
use crate::error::{Error, Result};
use crate::ingest::{split_dataset, GrowthLabel, LabeledCascade, PaperId, Split};
use crate::model::{log_targets, Batch, DeepCcp, ModelConfig, ModelHyper, ModelParams};
use crate::numeric::tensor::pairwise_sum;
use crate::numeric::{AdamConfig, AdamState, Backend, Tape, Tensor};
use crate::tree::{to_tree, CascadeTree};

/// One encoded cascade, as stored in the `*.jsonl` dataset files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedCascade {
    pub id: PaperId,
    #[serde(flatten)]
    pub sequence: DegreeSequence,
    pub label: GrowthLabel,
}

impl EncodedCascade {
    pub fn growth(&self) -> f64 {
        self.label.growth as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 1000,
            patience: 20,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config(format!(
                "batch_size, patience and max_epochs must be at least 1 (got {}, {}, {})",
                self.batch_size, self.patience, self.max_epochs
            )));
        }
        if !(self.adam.step_size > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.adam.step_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_msle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_msle: f64,
    /// MSLE of the best parameters on the held-out test set, when one was given.
    pub test_msle: Option<f64>,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Equality ignoring wall time.
    pub fn same_metrics(&self, other: &TrainReport) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val_msle == other.best_val_msle
            && self.test_msle == other.test_msle
            && self.stopped_early == other.stopped_early
    }

    /// `epoch,train_loss,val_msle` lines with a header.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_msle\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_msle));
        }
        out
    }
}

/// Patience counter over a metric that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs_seen: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epochs_seen: 0,
            since_best: 0,
        }
    }

    /// Records one epoch's metric; returns `(improved, stop)`.
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        self.epochs_seen += 1;
        let improved = self.best.is_none_or(|b| metric < b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = self.epochs_seen;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean squared error between predicted logs and `log2(G + 1)`.
pub fn msle(pred_log: &[f64], growth: &[f64]) -> Result<f64> {
    if pred_log.is_empty() {
        return Err(Error::Evaluation("no samples to evaluate".into()));
    }
    if pred_log.len() != growth.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} labels",
            pred_log.len(),
            growth.len()
        )));
    }
    let targets = log_targets(growth)?;
    let sq: Vec<f64> = pred_log.iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

pub fn evaluate(model: &DeepCcp, params: &ModelParams, data: &[EncodedCascade]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Evaluation("empty dataset".into()));
    }
    let seqs: Vec<&DegreeSequence> = data.iter().map(|c| &c.sequence).collect();
    let preds = model.predict(params, &seqs)?;
    let growth: Vec<f64> = data.iter().map(EncodedCascade::growth).collect();
    msle(&preds, &growth)
}

/// Every sequence must have the model's level lengths.
fn check_datasets(model: &DeepCcp, sets: &[&[EncodedCascade]]) -> Result<()> {
    let cfg = model.config();
    for set in sets {
        for c in *set {
            let lens: Vec<usize> = c.sequence.levels.iter().map(Vec::len).collect();
            if lens != cfg.level_lengths {
                return Err(Error::SchemaMismatch(format!(
                    "cascade {} has level lengths {:?}, model expects {:?}",
                    c.id, lens, cfg.level_lengths
                )));
            }
        }
    }
    Ok(())
}

/// Trains from a fresh seeded initialization, keeping the parameters with
/// the lowest validation MSLE.
pub fn train(
    model: &DeepCcp,
    train: &[EncodedCascade],
    val: &[EncodedCascade],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    check_datasets(model, &[train, val])?;
    let start = Instant::now();
    let mut params = model.init_params(cfg.seed);
    let mut adam = AdamState::new(cfg.adam, &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&EncodedCascade> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = step(model, &mut params, &mut adam, &samples)?;
            weighted.push(loss * samples.len() as f64);
        }
        let train_loss = pairwise_sum(&weighted) / train.len() as f64;
        let val_msle = evaluate(model, &params, val)?;
        if !val_msle.is_finite() {
            return Err(Error::Numeric(format!("validation MSLE is {val_msle} after epoch {epoch}")));
        }
        let (improved, stop) = stopper.observe(val_msle);
        if improved {
            best = params.clone();
        }
        debug!("epoch {epoch}: train loss {train_loss:.6}, val MSLE {val_msle:.6}");
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            val_msle,
        });
        if stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    let report = TrainReport {
        best_epoch: stopper.best_epoch(),
        best_val_msle: stopper.best().expect("at least one epoch"),
        test_msle: None,
        stopped_early,
        wall_time_secs: start.elapsed().as_secs_f64(),
        epochs,
    };
    info!(
        "trained {} epochs, best val MSLE {:.6} at epoch {}",
        report.epochs.len(),
        report.best_val_msle,
        report.best_epoch
    );
    Ok((best, report))
}

/// One Adam update on a batch; returns the batch loss before the update.
pub fn step(
    model: &DeepCcp,
    params: &mut ModelParams,
    adam: &mut AdamState,
    samples: &[&EncodedCascade],
) -> Result<f64> {
    let seqs: Vec<&DegreeSequence> = samples.iter().map(|c| &c.sequence).collect();
    let growth: Vec<f64> = samples.iter().map(|c| c.growth()).collect();
    let batch = Batch::new(model.config(), &seqs)?;

    let mut tape = Tape::new();
    let vars: Vec<_> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let preds = model.forward(&mut tape, &vars, &batch)?;
    let loss_var = model.loss(&mut tape, &vars, &preds, &growth)?;
    let loss = tape.value(&loss_var).item()?;
    let abort = |what: String, params: &ModelParams| {
        let ids: Vec<&str> = samples.iter().map(|c| c.id.as_str()).collect();
        let norms: Vec<String> = model
            .specs()
            .iter()
            .zip(params.squared_norms())
            .map(|(s, n)| format!("{}={:.3e}", s.name, n.sqrt()))
            .collect();
        Error::Numeric(format!("{what}; batch ids [{}]; parameter norms [{}]", ids.join(", "), norms.join(", ")))
    };
    if !loss.is_finite() {
        return Err(abort(format!("loss is {loss}"), params));
    }
    let grads = tape.backward(loss_var)?;
    let mut grads: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
    // The padding slot of λ is not a parameter.
    grads[model.lambda_index()].data_mut()[0] = 0.0;
    if let Err(e) = adam.step(&mut params.tensors, &grads) {
        return Err(abort(e.to_string(), params));
    }
    Ok(loss)
}

/// Trains on `split.train`, stops on `split.val` and scores the best
/// parameters on `split.test`.
pub fn fit(
    model: &DeepCcp,
    split: &Split<EncodedCascade>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let (params, mut report) = train(model, &split.train, &split.val, cfg)?;
    if !split.test.is_empty() {
        report.test_msle = Some(evaluate(model, &params, &split.test)?);
    }
    Ok((params, report))
}

/// `2^p − 1`, clamped at zero.
pub fn back_transform(pred_log: f64) -> f64 {
    (pred_log.exp2() - 1.0).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred_log: f64,
    pub pred_growth: f64,
    pub label: Option<u64>,
}

/// Predictions for an encoded dataset whose schema must equal the model's.
pub fn predict(
    model: &DeepCcp,
    params: &ModelParams,
    model_schema: &EncodingSchema,
    data_schema: &EncodingSchema,
    data: &[EncodedCascade],
) -> Result<Vec<Prediction>> {
    let diff = model_schema.diff(data_schema);
    if !diff.is_empty() {
        return Err(Error::SchemaMismatch(diff.join("; ")));
    }
    let seqs: Vec<&DegreeSequence> = data.iter().map(|c| &c.sequence).collect();
    let logs = model.predict(params, &seqs)?;
    Ok(data
        .iter()
        .zip(logs)
        .map(|(c, p)| Prediction {
            id: c.id.to_string(),
            pred_log: p,
            pred_growth: back_transform(p),
            label: Some(c.label.growth),
        })
        .collect())
}

/// Writes `id,pred_log,pred_growth,label` rows. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_predictions(w: impl Write, preds: &[Prediction]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in preds {
        out.serialize(p).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(r: impl Read) -> Result<Vec<Prediction>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_error))
        .collect()
}

/// MSLE recomputed from a predictions file; every row needs a label.
pub fn msle_from_predictions(preds: &[Prediction]) -> Result<f64> {
    let mut logs = Vec::with_capacity(preds.len());
    let mut growth = Vec::with_capacity(preds.len());
    for p in preds {
        let g = p
            .label
            .ok_or_else(|| Error::Evaluation(format!("prediction for {} has no label", p.id)))?;
        logs.push(p.pred_log);
        growth.push(g as f64);
    }
    msle(&logs, &growth)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line: 0,
            message: format!("{kind:?}"),
        },
    }
}

/// A labelled corpus converted to trees, encoded against a corpus-wide
/// schema and split 70/15/15.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub schema: EncodingSchema,
    pub trees: Vec<CascadeTree>,
    pub split: Split<EncodedCascade>,
}

pub fn prepare(cascades: &[LabeledCascade], bin_count: usize, seed: u64) -> Result<PreparedCorpus> {
    let window_t = match cascades.first() {
        Some(c) => c.cascade.window_t,
        None => return Err(Error::Schema("cannot build a schema from an empty corpus".into())),
    };
    if let Some(c) = cascades.iter().find(|c| c.cascade.window_t != window_t) {
        return Err(Error::Schema(format!(
            "cascade {} has window {} but the corpus uses {window_t}",
            c.cascade.root, c.cascade.window_t
        )));
    }
    let trees = cascades
        .iter()
        .map(|c| to_tree(&c.cascade))
        .collect::<Result<Vec<_>>>()?;
    let schema = schema_from_corpus(&trees, bin_count, window_t)?;
    let encoded = cascades
        .iter()
        .zip(&trees)
        .map(|(c, t)| {
            Ok(EncodedCascade {
                id: c.cascade.root.clone(),
                sequence: encode(t, &schema)?,
                label: c.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = split_dataset(encoded, seed)?;
    Ok(PreparedCorpus { schema, trees, split })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bins: usize,
    pub best_epoch: usize,
    pub best_val_msle: f64,
    pub test_msle: f64,
}

/// Retrains from scratch for every interval count `L` with the same seed.
pub fn sweep_time_interval(
    cascades: &[LabeledCascade],
    bin_counts: &[usize],
    hyper: &ModelHyper,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if bin_counts.len() < 2 {
        return Err(Error::Config(format!(
            "a sweep needs at least two interval counts, got {bin_counts:?}"
        )));
    }
    bin_counts
        .iter()
        .map(|&bins| {
            let corpus = prepare(cascades, bins, cfg.seed)?;
            let model = DeepCcp::new(ModelConfig::new(hyper, &corpus.schema)?)?;
            let (_, report) = fit(&model, &corpus.split, cfg)?;
            info!("L = {bins}: test MSLE {:?}", report.test_msle);
            Ok(SweepRow {
                bins,
                best_epoch: report.best_epoch,
                best_val_msle: report.best_val_msle,
                test_msle: report.test_msle.expect("split always has a test set"),
            })
        })
        .collect()
}

pub fn write_sweep(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}
