//! Does the flattened, time-decayed degree vector carry the shape of the
//! citation tree? A small regressor is fit from the vector to five
//! structural features and scored on held-out cascades.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::DegreeSequence;
use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, AdamState, Backend, Eager, Tape, Tensor};
use crate::tree::CascadeTree;

pub const FEATURE_NAMES: [&str; 5] = ["edges", "max_path", "ave_path", "leaves", "ave_degree"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub edges: f64,
    pub max_path: f64,
    pub ave_path: f64,
    pub leaves: f64,
    pub ave_degree: f64,
}

impl StructuralFeatures {
    pub fn to_array(&self) -> [f64; 5] {
        [self.edges, self.max_path, self.ave_path, self.leaves, self.ave_degree]
    }
}

pub fn structural_features(tree: &CascadeTree) -> Result<StructuralFeatures> {
    let n = tree.len();
    if n < 2 {
        return Err(Error::Feature(format!(
            "cascade {} has no citers; structural features need at least two nodes",
            tree.root()
        )));
    }
    let edges = tree.edge_count() as f64;
    Ok(StructuralFeatures {
        edges,
        max_path: tree.max_depth() as f64,
        ave_path: tree.mean_depth(),
        leaves: tree.leaf_count() as f64,
        ave_degree: 2.0 * edges / n as f64,
    })
}

/// Concatenates every level's `d · λ[bin]`.
pub fn flatten_sequence(seq: &DegreeSequence, lambda: Option<&[f64]>) -> Result<Vec<f64>> {
    seq.levels
        .iter()
        .flatten()
        .map(|e| match lambda {
            None => Ok(if e.is_pad() { 0.0 } else { f64::from(e.d) }),
            Some(l) => l
                .get(e.bin as usize)
                .map(|w| w * f64::from(e.d))
                .ok_or_else(|| Error::Feature(format!("bin {} has no decay weight", e.bin))),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Fraction of cascades used for fitting.
    pub train_fraction: f64,
    pub seed: u64,
    /// Negative control: permute feature rows across cascades first.
    pub shuffle_labels: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            epochs: 200,
            batch_size: 32,
            step_size: 5e-3,
            train_fraction: 0.8,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    /// Held-out MSE on the min-max normalized scale.
    pub mse: f64,
    /// The feature is constant on the training split; its MSE is reported as 0.
    pub constant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub scores: Vec<FeatureScore>,
    pub train_size: usize,
    pub test_size: usize,
    pub shuffled: bool,
}

impl ProbeReport {
    pub fn mse(&self, feature: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.feature == feature).map(|s| s.mse)
    }

    /// Table-style CSV: one header row of feature names, one row of MSEs.
    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = self.scores.iter().map(|s| s.feature.as_str()).collect();
        let values: Vec<String> = self.scores.iter().map(|s| s.mse.to_string()).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

pub const MIN_PROBE_CASCADES: usize = 50;

struct Scaler {
    min: [f64; 5],
    range: [f64; 5],
}

impl Scaler {
    fn fit(rows: &[[f64; 5]]) -> Self {
        let mut min = [f64::INFINITY; 5];
        let mut max = [f64::NEG_INFINITY; 5];
        for r in rows {
            for j in 0..5 {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        let mut range = [0.0; 5];
        for j in 0..5 {
            range[j] = max[j] - min[j];
        }
        Scaler { min, range }
    }

    fn constant(&self, j: usize) -> bool {
        self.range[j] == 0.0
    }

    fn apply(&self, r: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for j in 0..5 {
            out[j] = if self.constant(j) { 0.0 } else { (r[j] - self.min[j]) / self.range[j] };
        }
        out
    }
}

fn two_layer<B: Backend>(b: &mut B, p: &[B::Value], x: &B::Value) -> Result<B::Value> {
    let h = b.linear(&p[0], &p[1], x)?;
    let h = b.relu(&h);
    b.linear(&p[2], &p[3], &h)
}

fn rows_tensor(rows: &[&[f64]]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.len());
    Tensor::matrix(rows.len(), width, rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// Fits the probe on a seeded 80/20 split and scores each feature.
pub fn probe(vectors: &[Vec<f64>], features: &[StructuralFeatures], cfg: &ProbeConfig) -> Result<ProbeReport> {
    let n = vectors.len();
    if n != features.len() {
        return Err(Error::Feature(format!("{n} vectors for {} feature rows", features.len())));
    }
    if n < MIN_PROBE_CASCADES {
        return Err(Error::Feature(format!(
            "the probe needs at least {MIN_PROBE_CASCADES} cascades, got {n}"
        )));
    }
    let width = vectors[0].len();
    if width == 0 || vectors.iter().any(|v| v.len() != width) {
        return Err(Error::Feature("input vectors must share a non-zero length".into()));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!("invalid probe settings {cfg:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut targets: Vec<[f64; 5]> = features.iter().map(StructuralFeatures::to_array).collect();
    if cfg.shuffle_labels {
        targets.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * cfg.train_fraction).floor() as usize;
    let (train_idx, test_idx) = order.split_at(n_train.clamp(1, n - 1));

    let scaler = Scaler::fit(&train_idx.iter().map(|&i| targets[i]).collect::<Vec<_>>());
    let x_scale = train_idx
        .iter()
        .flat_map(|&i| vectors[i].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let x_scale = if x_scale > 0.0 { x_scale } else { 1.0 };
    let inputs: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().map(|x| x / x_scale).collect()).collect();
    let normalized: Vec<[f64; 5]> = targets.iter().map(|t| scaler.apply(t)).collect();

    let glorot = |rng: &mut ChaCha8Rng, out: usize, inp: usize| {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        Tensor::matrix(out, inp, (0..out * inp).map(|_| rng.gen_range(-bound..=bound)).collect())
    };
    let mut params = vec![
        glorot(&mut rng, cfg.hidden, width)?,
        Tensor::zeros(&[cfg.hidden]),
        glorot(&mut rng, 5, cfg.hidden)?,
        Tensor::zeros(&[5]),
    ];
    let mut adam = AdamState::new(
        AdamConfig {
            step_size: cfg.step_size,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut batch_order = train_idx.to_vec();
    for _ in 0..cfg.epochs {
        batch_order.shuffle(&mut rng);
        for chunk in batch_order.chunks(cfg.batch_size) {
            let x = rows_tensor(&chunk.iter().map(|&i| inputs[i].as_slice()).collect::<Vec<_>>())?;
            let y = rows_tensor(&chunk.iter().map(|&i| normalized[i].as_slice()).collect::<Vec<_>>())?;
            let mut tape = Tape::new();
            let vars: Vec<_> = params.iter().map(|t| tape.leaf(t.clone())).collect();
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let pred = two_layer(&mut tape, &vars, &xv)?;
            let diff = tape.sub(&pred, &yv)?;
            let sq = tape.mul(&diff, &diff)?;
            let loss = tape.mean(&sq)?;
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
            adam.step(&mut params, &grads)?;
        }
    }

    let x = rows_tensor(&test_idx.iter().map(|&i| inputs[i].as_slice()).collect::<Vec<_>>())?;
    let pred = two_layer(&mut Eager, &params, &x)?;
    let mut sums = [0.0; 5];
    for (row, &i) in test_idx.iter().enumerate() {
        for j in 0..5 {
            let d = pred.data()[row * 5 + j] - normalized[i][j];
            sums[j] += d * d;
        }
    }
    let scores = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureScore {
            feature: name.to_string(),
            mse: if scaler.constant(j) { 0.0 } else { sums[j] / test_idx.len() as f64 },
            constant: scaler.constant(j),
        })
        .collect();
    Ok(ProbeReport {
        scores,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        shuffled: cfg.shuffle_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::testing::tree_from_parents;

    #[test]
    fn hand_counted_tree() {
        // root → a, b; a → c
        let f = structural_features(&tree_from_parents(&[0, 0, 1])).unwrap();
        assert_eq!(f.edges, 3.0);
        assert_eq!(f.max_path, 2.0);
        assert!((f.ave_path - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.leaves, 2.0);
        assert_eq!(f.ave_degree, 1.5);
    }

    #[test]
    fn star_closed_form() {
        for m in 1..8 {
            let f = structural_features(&tree_from_parents(&vec![0; m])).unwrap();
            assert_eq!(f.to_array()[..4], [m as f64, 1.0, 1.0, m as f64]);
        }
    }

    #[test]
    fn root_only_is_rejected() {
        assert!(matches!(structural_features(&tree_from_parents(&[])), Err(Error::Feature(_))));
    }

    #[test]
    fn flattening_applies_decay() {
        use crate::encoding::Entry;
        let seq = DegreeSequence {
            levels: vec![vec![Entry { d: 3, bin: 2 }, Entry::PAD], vec![Entry { d: 1, bin: 1 }]],
        };
        assert_eq!(flatten_sequence(&seq, None).unwrap(), vec![3.0, 0.0, 1.0]);
        assert_eq!(flatten_sequence(&seq, Some(&[0.0, 0.5, 2.0])).unwrap(), vec![6.0, 0.0, 0.5]);
        assert!(flatten_sequence(&seq, Some(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn small_corpora_and_constant_columns() {
        let vectors = vec![vec![1.0, 2.0]; 10];
        let feats = vec![structural_features(&tree_from_parents(&[0])).unwrap(); 10];
        assert!(probe(&vectors, &feats, &ProbeConfig::default()).is_err());

        let vectors: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, 1.0]).collect();
        let feats = vec![structural_features(&tree_from_parents(&[0, 0])).unwrap(); 60];
        let cfg = ProbeConfig { epochs: 2, ..ProbeConfig::default() };
        let r = probe(&vectors, &feats, &cfg).unwrap();
        assert!(r.scores.iter().all(|s| s.constant && s.mse == 0.0));
        assert_eq!((r.train_size, r.test_size), (48, 12));
        assert_eq!(r, probe(&vectors, &feats, &cfg).unwrap());
        assert!(r.to_csv().starts_with("edges,max_path,ave_path,leaves,ave_degree\n"));
    }
}
