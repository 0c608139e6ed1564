//! Synthetic citation cascades grown by timestamped preferential attachment.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{observe, CitationData, CitationEvent, Citer, Horizon, LabeledCascade, PaperId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_cascades: usize,
    /// Inclusive bounds on the final node count, root included.
    pub min_size: usize,
    pub max_size: usize,
    /// Days over which citations arrive.
    pub time_horizon: i64,
    /// Observation window used for labelling.
    pub window: i64,
    pub horizon: Horizon,
    /// Added to every node's child count when choosing whom to cite.
    pub attachment_bias: f64,
    /// Probability that a citer also cites a second, uniformly chosen member.
    pub extra_parent_prob: f64,
    /// Root publication days are spread over `[0, root_spread)`.
    pub root_spread: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cascades: 200,
            min_size: 10,
            max_size: 60,
            time_horizon: 3650,
            window: 1461,
            horizon: Horizon::EndOfData,
            attachment_bias: 1.0,
            extra_parent_prob: 0.3,
            root_spread: 365,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_size < 2 || self.max_size < self.min_size {
            return bad(format!(
                "size range [{}, {}] must satisfy 2 <= min <= max",
                self.min_size, self.max_size
            ));
        }
        if self.time_horizon < self.max_size as i64 {
            return bad(format!(
                "time horizon {} cannot hold {} distinct adoption days",
                self.time_horizon, self.max_size
            ));
        }
        if self.window <= 0 {
            return bad(format!("window must be positive, got {}", self.window));
        }
        if !(self.attachment_bias > 0.0) || !self.attachment_bias.is_finite() {
            return bad(format!("attachment bias must be positive, got {}", self.attachment_bias));
        }
        if !(0.0..=1.0).contains(&self.extra_parent_prob) {
            return bad(format!("extra parent probability {} outside [0, 1]", self.extra_parent_prob));
        }
        if self.root_spread < 1 {
            return bad(format!("root spread must be at least 1, got {}", self.root_spread));
        }
        Ok(())
    }
}

/// A fully grown cascade before windowing.
#[derive(Clone, Debug, PartialEq)]
pub struct GrownCascade {
    pub root: PaperId,
    pub root_time: i64,
    /// `(id, days after root, cited ids)` in adoption order; every member cites the root.
    pub members: Vec<(PaperId, i64, BTreeSet<PaperId>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub cascades: Vec<GrownCascade>,
}

impl SyntheticCorpus {
    pub fn grow(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cascades = (0..config.n_cascades)
            .map(|i| grow_one(i, config, &mut rng))
            .collect();
        Ok(SyntheticCorpus {
            config: config.clone(),
            cascades,
        })
    }

    /// Labelled cascades under the configured window and horizon.
    pub fn labeled(&self) -> Vec<LabeledCascade> {
        let horizon_end = match self.config.horizon {
            Horizon::EndOfData => None,
            Horizon::Days(d) => Some(self.config.window + d),
        };
        self.cascades
            .iter()
            .map(|g| {
                let citers = g.members.iter().map(|(id, t, cites)| Citer { id, t: *t, cites });
                observe(&g.root, g.root_time, citers, self.config.window, horizon_end)
            })
            .collect()
    }

    /// Flattens the corpus into citation events with absolute publication days.
    pub fn citation_data(&self) -> CitationData {
        let mut publication = BTreeMap::new();
        let mut events = Vec::new();
        for g in &self.cascades {
            publication.insert(g.root.clone(), g.root_time);
            for (id, t, cites) in &g.members {
                let time = g.root_time + t;
                publication.insert(id.clone(), time);
                events.extend(cites.iter().map(|c| CitationEvent {
                    citing: id.clone(),
                    cited: c.clone(),
                    time,
                }));
            }
        }
        CitationData {
            events,
            publication,
            dropped_undated: 0,
        }
    }
}

/// Generates `config.n_cascades` labelled cascades.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<LabeledCascade>> {
    Ok(SyntheticCorpus::grow(config)?.labeled())
}

fn grow_one(index: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> GrownCascade {
    let size = rng.gen_range(cfg.min_size..=cfg.max_size);
    let root_time = rng.gen_range(0..cfg.root_spread);
    let times = adoption_days(size - 1, cfg.time_horizon, rng);

    let root = PaperId::new(format!("s{index:05}")).expect("non-empty");
    let ids: Vec<PaperId> = std::iter::once(root.clone())
        .chain((1..size).map(|j| PaperId::new(format!("s{index:05}.{j:04}")).expect("non-empty")))
        .collect();

    let mut children = vec![0usize; size];
    let mut members = Vec::with_capacity(size - 1);
    for (j, &t) in times.iter().enumerate() {
        let me = j + 1;
        let weights: Vec<f64> = children[..me].iter().map(|&c| c as f64 + cfg.attachment_bias).collect();
        let parent = weighted_choice(&weights, rng);
        children[parent] += 1;

        let mut cites = BTreeSet::new();
        cites.insert(root.clone());
        cites.insert(ids[parent].clone());
        if me > 1 && rng.gen_bool(cfg.extra_parent_prob) {
            let extra = rng.gen_range(1..me);
            cites.insert(ids[extra].clone());
        }
        members.push((ids[me].clone(), t, cites));
    }
    GrownCascade {
        root,
        root_time,
        members,
    }
}

/// `count` distinct sorted days in `[1, horizon)`, skewed towards early or
/// late arrival by a per-cascade exponent.
fn adoption_days(count: usize, horizon: i64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let span = (horizon - 1) as usize;
    let shape: f64 = rng.gen_range(0.5..2.0);
    let mut days = BTreeSet::new();
    let mut attempts = 0;
    while days.len() < count && attempts < 64 * count {
        let u: f64 = rng.gen();
        let d = 1 + ((span as f64) * u.powf(shape)).floor() as i64;
        days.insert(d.min(horizon - 1));
        attempts += 1;
    }
    if days.len() < count {
        let free: Vec<i64> = (1..horizon).filter(|d| !days.contains(d)).collect();
        for k in sample(rng, free.len(), count - days.len()) {
            days.insert(free[k]);
        }
    }
    days.into_iter().collect()
}

fn weighted_choice(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}
