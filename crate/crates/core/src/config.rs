//! Pipeline configuration: documented defaults, overridden by a JSON file,
//! overridden by command-line flags.
//!
//! Sources are merged as JSON objects before deserialization, so an unknown
//! key anywhere is reported together with the keys that are accepted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::ingest::{Horizon, SynthConfig};
use crate::model::ModelHyper;
use crate::probe::ProbeConfig;
use crate::train::TrainConfig;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Observation window `T` in days.
    pub window_days: i64,
    pub horizon: Horizon,
    /// Number of time intervals `L`.
    pub bins: usize,
    /// Cascades with fewer observed citers are dropped.
    pub min_observed: usize,
    pub seed: u64,
    /// Interval counts retrained by `sweep`.
    pub sweep_bins: Vec<usize>,
    pub model: ModelHyper,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_days: years_to_days(4.0),
            horizon: Horizon::EndOfData,
            bins: 6,
            min_observed: 1,
            seed: 0,
            sweep_bins: vec![2, 4, 6, 8, 10],
            model: ModelHyper::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            synth: SynthConfig {
                window: years_to_days(4.0),
                seed: 0,
                ..SynthConfig::default()
            },
        }
    }
}

pub fn years_to_days(years: f64) -> i64 {
    (years * DAYS_PER_YEAR).round() as i64
}

/// Top-level keys whose values are copied into nested sections.
const SHARED: &[(&str, &[(&str, &str)])] = &[
    ("seed", &[("train", "seed"), ("probe", "seed"), ("synth", "seed")]),
    ("window_days", &[("synth", "window")]),
    ("horizon", &[("synth", "horizon")]),
];

/// A named layer of configuration values.
#[derive(Clone, Debug)]
pub struct Source {
    pub name: String,
    pub values: Map<String, Value>,
}

impl Source {
    pub fn new(name: impl Into<String>, values: Value) -> Result<Self> {
        let name = name.into();
        match values {
            Value::Object(values) => Ok(Source { name, values }),
            other => Err(Error::Config(format!("{name} must be a JSON object, got {other}"))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{} is not valid JSON: {e}", path.display())))?;
        Source::new(format!("config file {}", path.display()), value)
    }

    /// Rewrites aliases into canonical keys, rejecting a source that gives
    /// two different values for one quantity.
    fn normalize(mut self) -> Result<Self> {
        if let Some(years) = self.values.remove("window_years") {
            let y = years
                .as_f64()
                .filter(|y| *y > 0.0)
                .ok_or_else(|| Error::Config(format!("{}: window_years must be a positive number, got {years}", self.name)))?;
            let days = years_to_days(y);
            if let Some(existing) = self.values.get("window_days") {
                if existing.as_i64() != Some(days) {
                    return Err(Error::Config(format!(
                        "{} sets window_years = {years} ({days} days) and window_days = {existing}; use one of them",
                        self.name
                    )));
                }
            }
            self.values.insert("window_days".into(), Value::from(days));
        }
        for (top, nested) in SHARED {
            for (section, key) in *nested {
                let Some(inner) = self.values.get(*section).and_then(Value::as_object).and_then(|o| o.get(*key)) else {
                    continue;
                };
                let inner = inner.clone();
                match self.values.get(*top) {
                    Some(v) if *v != inner => {
                        return Err(Error::Config(format!(
                            "{} sets {top} = {v} but {section}.{key} = {inner}",
                            self.name
                        )))
                    }
                    Some(_) => {}
                    None => {
                        self.values.insert(top.to_string(), inner);
                    }
                }
                if let Some(Value::Object(o)) = self.values.get_mut(*section) {
                    o.remove(*key);
                }
            }
        }
        Ok(self)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves defaults overridden by each source in turn.
pub fn resolve(sources: Vec<Source>) -> Result<PipelineConfig> {
    let mut merged = serde_json::to_value(PipelineConfig::default())?;
    for source in sources {
        let source = source.normalize()?;
        let name = source.name.clone();
        let mut probe = serde_json::to_value(PipelineConfig::default())?;
        merge(&mut probe, Value::Object(source.values.clone()));
        serde_json::from_value::<PipelineConfig>(probe).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        merge(&mut merged, Value::Object(source.values));
    }
    let mut cfg: PipelineConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    cfg.train.seed = cfg.seed;
    cfg.probe.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
    cfg.synth.window = cfg.window_days;
    cfg.synth.horizon = cfg.horizon;
    cfg.validate()?;
    Ok(cfg)
}

/// Defaults, then the optional file, then flags.
pub fn load_config(file: Option<&Path>, flags: Value) -> Result<PipelineConfig> {
    let mut sources = Vec::new();
    if let Some(path) = file {
        sources.push(Source::from_file(path)?);
    }
    sources.push(Source::new("command-line flags", flags)?);
    resolve(sources)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days <= 0 {
            return Err(Error::Config(format!("window must be positive, got {} days", self.window_days)));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if let Horizon::Days(d) = self.horizon {
            if d <= 0 {
                return Err(Error::Config(format!("horizon must be positive, got {d}")));
            }
        }
        self.train.validate()?;
        self.synth.validate()
    }
}
