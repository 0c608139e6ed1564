//! The growth regressor.
//!
//! For every level `k` the degree entries are scaled by a learned per-bin
//! decay weight, mapped to width `M` by a per-level fully connected stack and
//! fed as step `k` of a GRU. Every hidden state passes through a shared
//! single-channel convolution (output width `M/2`) with a rectifier; the `K`
//! outputs are concatenated and an MLP head predicts `log2(G + 1)`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{DegreeSequence, EncodingSchema};
use crate::error::{Error, Result};
use crate::numeric::tensor::conv1d_output_len;
use crate::numeric::{Backend, Eager, Tensor, TensorCheckpoint};

/// Architecture and loss settings that do not depend on the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelHyper {
    /// Pre-embedding output width and GRU hidden width `M`.
    pub hidden: usize,
    /// Fully connected layers in each level's pre-embedding.
    pub pre_embed_layers: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub head_hidden: Vec<usize>,
    /// Weight of the squared log error.
    pub alpha: f64,
    /// Weight of the squared Frobenius norm of the weight matrices.
    pub beta: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            hidden: 32,
            pre_embed_layers: 2,
            conv_kernel: 2,
            conv_stride: 2,
            head_hidden: vec![32, 16],
            alpha: 1.0,
            beta: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub pre_embed_layers: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub head_hidden: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub bin_count: usize,
    pub level_lengths: Vec<usize>,
}

impl ModelConfig {
    pub fn new(hyper: &ModelHyper, schema: &EncodingSchema) -> Result<Self> {
        let cfg = ModelConfig {
            hidden: hyper.hidden,
            pre_embed_layers: hyper.pre_embed_layers,
            conv_kernel: hyper.conv_kernel,
            conv_stride: hyper.conv_stride,
            head_hidden: hyper.head_hidden.clone(),
            alpha: hyper.alpha,
            beta: hyper.beta,
            bin_count: schema.bin_count,
            level_lengths: schema.level_lengths.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        self.level_lengths.len()
    }

    /// Width of each convolution output, `M/2`.
    pub fn conv_width(&self) -> usize {
        self.hidden / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return bad(format!("hidden width M must be even and at least 2, got {}", self.hidden));
        }
        if conv_1d_width(self.hidden, self.conv_kernel, self.conv_stride) != Some(self.hidden / 2) {
            return bad(format!(
                "convolution with kernel {} and stride {} over {} values must yield {} outputs",
                self.conv_kernel,
                self.conv_stride,
                self.hidden,
                self.hidden / 2
            ));
        }
        if self.pre_embed_layers == 0 {
            return bad("pre-embedding needs at least one layer".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head layer widths must be positive".into());
        }
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) {
            return bad(format!("need alpha > 0 and beta >= 0, got {} and {}", self.alpha, self.beta));
        }
        if self.bin_count == 0 || self.level_lengths.is_empty() || self.level_lengths.contains(&0) {
            return bad(format!(
                "need at least one bin and one non-empty level, got {} bins and levels {:?}",
                self.bin_count, self.level_lengths
            ));
        }
        Ok(())
    }
}

fn conv_1d_width(n: usize, kernel: usize, stride: usize) -> Option<usize> {
    conv1d_output_len(n, kernel, stride)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Per-bin time decay weights; the pad slot stays at zero.
    Decay,
    /// Regularised weight matrix or kernel.
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Glorot bound `(fan_in, fan_out)` for weights.
    fans: (usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct GruIndex {
    w_u: usize,
    w_r: usize,
    w_h: usize,
    u_u: usize,
    u_r: usize,
    u_h: usize,
    b_u: usize,
    b_r: usize,
    b_h: usize,
}

/// Position of every parameter tensor in the flat parameter list.
#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    lambda: usize,
    pre: Vec<Vec<Dense>>,
    gru: GruIndex,
    conv_w: usize,
    conv_b: usize,
    head: Vec<Dense>,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, kind: ParamKind, fans: (usize, usize)| {
            specs.push(ParamSpec { name, shape, kind, fans });
            specs.len() - 1
        };
        let m = cfg.hidden;
        let lambda = push("lambda".into(), vec![cfg.bin_count + 1], ParamKind::Decay, (0, 0));
        let dense = |push: &mut dyn FnMut(String, Vec<usize>, ParamKind, (usize, usize)) -> usize,
                         name: String,
                         inp: usize,
                         out: usize| Dense {
            w: push(format!("{name}.w"), vec![out, inp], ParamKind::Weight, (inp, out)),
            b: push(format!("{name}.b"), vec![out], ParamKind::Bias, (0, 0)),
        };

        let pre = cfg
            .level_lengths
            .iter()
            .enumerate()
            .map(|(k, &len)| {
                (0..cfg.pre_embed_layers)
                    .map(|j| {
                        let inp = if j == 0 { len } else { m };
                        dense(&mut push, format!("pre{}.{}", k + 1, j), inp, m)
                    })
                    .collect()
            })
            .collect();

        let square = |name: &str, push: &mut dyn FnMut(String, Vec<usize>, ParamKind, (usize, usize)) -> usize| {
            push(format!("gru.{name}"), vec![m, m], ParamKind::Weight, (m, m))
        };
        let w_u = square("w_u", &mut push);
        let w_r = square("w_r", &mut push);
        let w_h = square("w_h", &mut push);
        let u_u = square("u_u", &mut push);
        let u_r = square("u_r", &mut push);
        let u_h = square("u_h", &mut push);
        let b_u = push("gru.b_u".into(), vec![m], ParamKind::Bias, (0, 0));
        let b_r = push("gru.b_r".into(), vec![m], ParamKind::Bias, (0, 0));
        let b_h = push("gru.b_h".into(), vec![m], ParamKind::Bias, (0, 0));

        let k = cfg.conv_kernel;
        let conv_w = push("conv.w".into(), vec![k], ParamKind::Weight, (k, k));
        let conv_b = push("conv.b".into(), vec![1], ParamKind::Bias, (0, 0));

        let mut head = Vec::new();
        let mut inp = cfg.depth() * cfg.conv_width();
        for (j, &out) in cfg.head_hidden.iter().chain(std::iter::once(&1)).enumerate() {
            head.push(dense(&mut push, format!("head.{j}"), inp, out));
            inp = out;
        }

        Layout {
            specs,
            lambda,
            pre,
            gru: GruIndex {
                w_u,
                w_r,
                w_h,
                u_u,
                u_r,
                u_h,
                b_u,
                b_r,
                b_h,
            },
            conv_w,
            conv_b,
            head,
        }
    }
}

/// Parameter values in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn lambda(&self) -> &Tensor {
        &self.tensors[0]
    }

    pub fn squared_norms(&self) -> Vec<f64> {
        self.tensors.iter().map(Tensor::squared_norm).collect()
    }
}

/// One level of a batch: degrees and bin indices, both `[batch, L^k]`.
#[derive(Clone, Debug)]
pub struct LevelBatch {
    pub degrees: Tensor,
    pub bins: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub levels: Vec<LevelBatch>,
}

impl Batch {
    pub fn new(cfg: &ModelConfig, seqs: &[&DegreeSequence]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut levels = Vec::with_capacity(cfg.depth());
        for (k, &len) in cfg.level_lengths.iter().enumerate() {
            let mut degrees = Vec::with_capacity(seqs.len() * len);
            let mut bins = Vec::with_capacity(seqs.len() * len);
            for s in seqs {
                let level = match s.levels.get(k) {
                    Some(l) if l.len() == len && s.levels.len() == cfg.depth() => l,
                    _ => {
                        return Err(Error::Shape {
                            op: "batch",
                            left: cfg.level_lengths.clone(),
                            right: s.levels.iter().map(Vec::len).collect(),
                        })
                    }
                };
                for e in level {
                    if e.bin as usize > cfg.bin_count {
                        return Err(Error::Contract(format!(
                            "bin {} outside [0, {}]",
                            e.bin, cfg.bin_count
                        )));
                    }
                    degrees.push(f64::from(e.d));
                    bins.push(e.bin as usize);
                }
            }
            levels.push(LevelBatch {
                degrees: Tensor::matrix(seqs.len(), len, degrees)?,
                bins,
            });
        }
        Ok(Batch {
            size: seqs.len(),
            levels,
        })
    }
}

/// The full network: configuration plus parameter layout.
#[derive(Clone, Debug)]
pub struct DeepCcp {
    config: ModelConfig,
    layout: Layout,
}

impl DeepCcp {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(DeepCcp { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn lambda_index(&self) -> usize {
        self.layout.lambda
    }

    /// Glorot-uniform weights, zero biases, unit decay weights with a zero pad slot.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .layout
            .specs
            .iter()
            .map(|s| match s.kind {
                ParamKind::Decay => {
                    let mut t = Tensor::filled(&s.shape, 1.0);
                    t.data_mut()[0] = 0.0;
                    t
                }
                ParamKind::Bias => Tensor::zeros(&s.shape),
                ParamKind::Weight => {
                    let bound = glorot_bound(s.fans);
                    let n = s.shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                    Tensor::new(s.shape.clone(), data).expect("spec shape")
                }
            })
            .collect();
        ModelParams { tensors }
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.tensors.len() != self.layout.specs.len() {
            return Err(Error::Contract(format!(
                "{} parameter tensors for a model with {}",
                params.tensors.len(),
                self.layout.specs.len()
            )));
        }
        for (t, s) in params.tensors.iter().zip(&self.layout.specs) {
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape {
                    op: "params",
                    left: s.shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Time-decayed degrees `d · λ_bin` of one level, `[batch, L^k]`.
    pub fn apply_time_decay<B: Backend>(
        &self,
        b: &mut B,
        lambda: &B::Value,
        level: &LevelBatch,
    ) -> Result<B::Value> {
        let selected = b.gather(lambda, &level.bins, level.degrees.shape())?;
        let degrees = b.constant(level.degrees.clone());
        b.mul(&selected, &degrees)
    }

    fn pre_embed<B: Backend>(&self, b: &mut B, p: &[B::Value], k: usize, x: B::Value) -> Result<B::Value> {
        let layers = &self.layout.pre[k];
        let mut h = x;
        for (j, d) in layers.iter().enumerate() {
            h = b.linear(&p[d.w], &p[d.b], &h)?;
            if j + 1 < layers.len() {
                h = b.relu(&h);
            }
        }
        Ok(h)
    }

    fn gru_step<B: Backend>(&self, b: &mut B, p: &[B::Value], x: &B::Value, h: &B::Value) -> Result<B::Value> {
        let g = self.layout.gru;
        let gate = |b: &mut B, w: usize, u: usize, bias: usize, hh: &B::Value| -> Result<B::Value> {
            let wx = b.matvec(&p[w], x)?;
            let uh = b.matvec(&p[u], hh)?;
            let s = b.add(&wx, &uh)?;
            b.add_bias(&s, &p[bias])
        };
        let u_pre = gate(b, g.w_u, g.u_u, g.b_u, h)?;
        let u = b.sigmoid(&u_pre);
        let r_pre = gate(b, g.w_r, g.u_r, g.b_r, h)?;
        let r = b.sigmoid(&r_pre);
        let rh = b.mul(&r, h)?;
        let c_pre = gate(b, g.w_h, g.u_h, g.b_h, &rh)?;
        let candidate = b.tanh(&c_pre);
        // h' = u ⊙ ĥ + (1 − u) ⊙ h = h + u ⊙ (ĥ − h)
        let delta = b.sub(&candidate, h)?;
        let step = b.mul(&u, &delta)?;
        b.add(h, &step)
    }

    /// Predicted `log2(G + 1)` for each sample, `[batch, 1]`.
    pub fn forward<B: Backend>(&self, b: &mut B, p: &[B::Value], batch: &Batch) -> Result<B::Value> {
        if batch.levels.len() != self.config.depth() {
            return Err(Error::Shape {
                op: "forward",
                left: self.config.level_lengths.clone(),
                right: batch.levels.iter().map(|l| l.degrees.shape()[1]).collect(),
            });
        }
        let mut h = b.constant(Tensor::zeros(&[batch.size, self.config.hidden]));
        let mut pooled = Vec::with_capacity(self.config.depth());
        for (k, level) in batch.levels.iter().enumerate() {
            let decayed = self.apply_time_decay(b, &p[self.layout.lambda], level)?;
            let x = self.pre_embed(b, p, k, decayed)?;
            h = self.gru_step(b, p, &x, &h)?;
            let c = b.conv1d(&h, &p[self.layout.conv_w], &p[self.layout.conv_b], self.config.conv_stride)?;
            pooled.push(b.relu(&c));
        }
        let mut z = b.concat(&pooled)?;
        let n = self.layout.head.len();
        for (j, d) in self.layout.head.iter().enumerate() {
            z = b.linear(&p[d.w], &p[d.b], &z)?;
            if j + 1 < n {
                z = b.relu(&z);
            }
        }
        Ok(z)
    }

    /// Sum of squared Frobenius norms of the weight tensors.
    pub fn regularizer<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
        let mut total: Option<B::Value> = None;
        for (i, s) in self.layout.specs.iter().enumerate() {
            if s.kind != ParamKind::Weight {
                continue;
            }
            let sq = b.mul(&p[i], &p[i])?;
            let part = b.sum(&sq);
            total = Some(match total {
                Some(t) => b.add(&t, &part)?,
                None => part,
            });
        }
        Ok(total.unwrap_or_else(|| b.constant(Tensor::scalar(0.0))))
    }

    /// `α · mean((pred − log2(G+1))²) + β · Σ‖W‖²_F`.
    pub fn loss<B: Backend>(&self, b: &mut B, p: &[B::Value], preds: &B::Value, growth: &[f64]) -> Result<B::Value> {
        let targets = log_targets(growth)?;
        let n = targets.len();
        let shape = b.value(preds).shape().to_vec();
        if shape.iter().product::<usize>() != n || n == 0 {
            return Err(Error::Shape {
                op: "loss",
                left: shape,
                right: vec![n],
            });
        }
        let y = b.constant(Tensor::new(shape, targets)?);
        let diff = b.sub(preds, &y)?;
        let sq = b.mul(&diff, &diff)?;
        let mse = b.mean(&sq)?;
        let fit = b.scale(&mse, self.config.alpha);
        if self.config.beta == 0.0 {
            return Ok(fit);
        }
        let reg = self.regularizer(b, p)?;
        let reg = b.scale(&reg, self.config.beta);
        b.add(&fit, &reg)
    }

    /// Forward pass without recording, in chunks.
    pub fn predict(&self, params: &ModelParams, seqs: &[&DegreeSequence]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let batch = Batch::new(&self.config, chunk)?;
            let y = self.forward(&mut Eager, &params.tensors, &batch)?;
            out.extend_from_slice(y.data());
        }
        Ok(out)
    }
}

fn glorot_bound((fan_in, fan_out): (usize, usize)) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `log2(G + 1)` of each growth count.
pub fn log_targets(growth: &[f64]) -> Result<Vec<f64>> {
    growth
        .iter()
        .map(|&g| {
            if g >= 0.0 && g.is_finite() {
                Ok((g + 1.0).log2())
            } else {
                Err(Error::Contract(format!("growth label must be non-negative, got {g}")))
            }
        })
        .collect()
}

pub const MODEL_FORMAT: &str = "cascadecite-model";

/// Self-describing trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub config: ModelConfig,
    pub schema: EncodingSchema,
    pub params: TensorCheckpoint,
}

impl ModelCheckpoint {
    pub fn new(model: &DeepCcp, schema: &EncodingSchema, params: &ModelParams) -> Self {
        let named = model
            .specs()
            .iter()
            .zip(&params.tensors)
            .map(|(s, t)| (s.name.as_str(), t));
        ModelCheckpoint {
            format: MODEL_FORMAT.into(),
            config: model.config().clone(),
            schema: schema.clone(),
            params: TensorCheckpoint::from_tensors(named),
        }
    }

    /// Rebuilds the model and its parameters, refusing mismatched contents.
    pub fn restore(&self) -> Result<(DeepCcp, ModelParams)> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Checkpoint(format!("unknown checkpoint format `{}`", self.format)));
        }
        let model = DeepCcp::new(self.config.clone())?;
        if self.schema.level_lengths != self.config.level_lengths || self.schema.bin_count != self.config.bin_count {
            return Err(Error::Checkpoint("embedded schema disagrees with the model config".into()));
        }
        let expected: Vec<(String, Vec<usize>)> = model
            .specs()
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect();
        let tensors = self.params.restore(&expected)?;
        Ok((model, ModelParams { tensors }))
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Entry;
    use crate::numeric::gradcheck::{check, value_and_grad, Differentiable, GradCheckOptions};
    use crate::numeric::Tape;

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden: 6,
            pre_embed_layers: 2,
            conv_kernel: 2,
            conv_stride: 2,
            head_hidden: vec![5, 3],
            alpha: 1.0,
            beta: 1e-2,
            bin_count: 3,
            level_lengths: vec![3, 2, 2],
        }
    }

    fn random_sequence(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> DegreeSequence {
        let levels = cfg
            .level_lengths
            .iter()
            .map(|&len| {
                let real = rng.gen_range(0..=len);
                let mut degrees: Vec<u32> = (0..real).map(|_| rng.gen_range(1..5)).collect();
                degrees.sort_unstable_by(|a, b| b.cmp(a));
                let mut level: Vec<Entry> = degrees
                    .into_iter()
                    .map(|d| Entry { d, bin: rng.gen_range(1..=cfg.bin_count as u32) })
                    .collect();
                level.resize(len, Entry::PAD);
                level
            })
            .collect();
        DegreeSequence { levels }
    }

    struct Objective<'a> {
        model: &'a DeepCcp,
        batch: Batch,
        growth: Vec<f64>,
    }

    impl Differentiable for Objective<'_> {
        fn eval<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
            let preds = self.model.forward(b, p, &self.batch)?;
            self.model.loss(b, p, &preds, &self.growth)
        }
    }

    fn objective(model: &DeepCcp, seed: u64, n: usize) -> Objective<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs: Vec<DegreeSequence> = (0..n).map(|_| random_sequence(model.config(), &mut rng)).collect();
        let refs: Vec<&DegreeSequence> = seqs.iter().collect();
        Objective {
            model,
            batch: Batch::new(model.config(), &refs).unwrap(),
            growth: (0..n).map(|_| rng.gen_range(0..40) as f64).collect(),
        }
    }

    #[test]
    fn concatenated_width() {
        let hyper = ModelHyper::default();
        let schema = EncodingSchema::new(vec![5, 4, 3, 2, 2], 6, 1461).unwrap();
        let model = DeepCcp::new(ModelConfig::new(&hyper, &schema).unwrap()).unwrap();
        let head_in = &model.specs()[model.layout.head[0].w];
        assert_eq!(head_in.shape, vec![32, 80]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.hidden = 7;
        assert!(DeepCcp::new(cfg).is_err());
        let mut cfg = small_config();
        cfg.conv_kernel = 3;
        assert!(DeepCcp::new(cfg).is_err());
        let mut cfg = small_config();
        cfg.alpha = 0.0;
        assert!(DeepCcp::new(cfg).is_err());
    }

    #[test]
    fn initialization() {
        let model = DeepCcp::new(small_config()).unwrap();
        let a = model.init_params(5);
        assert_eq!(a, model.init_params(5));
        assert_ne!(a, model.init_params(6));
        assert_eq!(a.lambda().data(), &[0.0, 1.0, 1.0, 1.0]);
        for (s, t) in model.specs().iter().zip(&a.tensors) {
            match s.kind {
                ParamKind::Weight => {
                    let bound = glorot_bound(s.fans);
                    assert!(t.data().iter().all(|v| v.abs() <= bound), "{}", s.name);
                }
                ParamKind::Bias => assert!(t.data().iter().all(|&v| v == 0.0)),
                ParamKind::Decay => {}
            }
        }
    }

    #[test]
    fn time_decay_is_degree_times_lambda() {
        let model = DeepCcp::new(small_config()).unwrap();
        let level = LevelBatch {
            degrees: Tensor::matrix(1, 3, vec![3.0, 2.0, 0.0]).unwrap(),
            bins: vec![2, 1, 0],
        };
        let lambda = Tensor::vector(vec![0.0, 1.0, 0.5, 2.0]);
        let out = model.apply_time_decay(&mut Eager, &lambda, &level).unwrap();
        assert_eq!(out.data(), &[1.5, 2.0, 0.0]);

        let ones = Tensor::vector(vec![0.0, 1.0, 1.0, 1.0]);
        let out = model.apply_time_decay(&mut Eager, &ones, &level).unwrap();
        assert_eq!(out.data(), level.degrees.data());
    }

    #[test]
    fn pre_embedding_scales_with_lambda_when_biases_are_zero() {
        let model = DeepCcp::new(small_config()).unwrap();
        let params = model.init_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = random_sequence(model.config(), &mut rng);
        let batch = Batch::new(model.config(), &[&seq]).unwrap();
        let c = 2.5;
        let scaled_lambda = crate::numeric::tensor::scale(params.lambda(), c);
        for (k, level) in batch.levels.iter().enumerate() {
            let x1 = model.apply_time_decay(&mut Eager, params.lambda(), level).unwrap();
            let xc = model.apply_time_decay(&mut Eager, &scaled_lambda, level).unwrap();
            let e1 = model.pre_embed(&mut Eager, &params.tensors, k, x1).unwrap();
            let ec = model.pre_embed(&mut Eager, &params.tensors, k, xc).unwrap();
            for (a, b) in e1.data().iter().zip(ec.data()) {
                assert!((c * a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_padding_input_is_finite_and_deterministic() {
        let model = DeepCcp::new(small_config()).unwrap();
        let params = model.init_params(1);
        let pad = DegreeSequence {
            levels: model.config().level_lengths.iter().map(|&n| vec![Entry::PAD; n]).collect(),
        };
        let a = model.predict(&params, &[&pad]).unwrap();
        let b = model.predict(&params, &[&pad]).unwrap();
        assert!(a[0].is_finite());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        // Zero inputs and zero biases leave every hidden state at zero.
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn loss_arithmetic() {
        let mut cfg = small_config();
        cfg.beta = 0.0;
        let model = DeepCcp::new(cfg).unwrap();
        let params = model.init_params(0);
        let preds = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        let l = model.loss(&mut Eager, &params.tensors, &preds, &[1.0]).unwrap();
        assert_eq!(l.item().unwrap(), 4.0);

        let exact = Tensor::matrix(2, 1, vec![0.0, 3.0]).unwrap();
        let l = model.loss(&mut Eager, &params.tensors, &exact, &[0.0, 7.0]).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);

        assert!(model.loss(&mut Eager, &params.tensors, &preds, &[-1.0]).is_err());
    }

    #[test]
    fn regulariser_sums_weight_matrices_only() {
        let model = DeepCcp::new(small_config()).unwrap();
        let mut params = model.init_params(4);
        for t in &mut params.tensors {
            for v in t.data_mut() {
                *v += 0.25;
            }
        }
        let log = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        let growth = [1.0, 3.0];
        let l = model.loss(&mut Eager, &params.tensors, &log, &growth).unwrap().item().unwrap();
        let mut expected = 0.0;
        for (s, t) in model.specs().iter().zip(&params.tensors) {
            if s.kind == ParamKind::Weight {
                expected += t.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        assert!((l - model.config().beta * expected).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradients_match_differences() {
        let model = DeepCcp::new(small_config()).unwrap();
        for seed in 0..3 {
            let obj = objective(&model, seed, 3);
            let mut params = model.init_params(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            for t in &mut params.tensors {
                for v in t.data_mut() {
                    *v += rng.gen_range(-0.1..0.1);
                }
            }
            let r = check(&obj, &params.tensors, &GradCheckOptions::default()).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn empty_bin_gets_no_gradient() {
        let model = DeepCcp::new(small_config()).unwrap();
        let mut obj = objective(&model, 3, 4);
        for level in &mut obj.batch.levels {
            for bin in &mut level.bins {
                if *bin == 2 {
                    *bin = 1;
                }
            }
        }
        let params = model.init_params(3);
        let (_, grads) = value_and_grad(&obj, &params.tensors).unwrap();
        let g = grads[model.lambda_index()].data();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert!(g[1] != 0.0 && g[3] != 0.0);
    }

    #[test]
    fn small_gradient_step_descends() {
        let model = DeepCcp::new(small_config()).unwrap();
        for seed in 0..10 {
            let obj = objective(&model, seed, 5);
            let params = model.init_params(seed);
            let (before, grads) = value_and_grad(&obj, &params.tensors).unwrap();
            let stepped: Vec<Tensor> = params
                .tensors
                .iter()
                .zip(&grads)
                .map(|(p, g)| {
                    let data = p.data().iter().zip(g.data()).map(|(w, d)| w - 1e-4 * d).collect();
                    Tensor::new(p.shape().to_vec(), data).unwrap()
                })
                .collect();
            let after = obj.eval(&mut Eager, &stepped).unwrap().item().unwrap();
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn taped_forward_equals_eager_forward() {
        let model = DeepCcp::new(small_config()).unwrap();
        let obj = objective(&model, 8, 4);
        let params = model.init_params(8);
        let eager = model.forward(&mut Eager, &params.tensors, &obj.batch).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<_> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let taped = model.forward(&mut tape, &vars, &obj.batch).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(tape.value(&taped)), bits(&eager));
    }

    #[test]
    fn gru_gates_stay_in_range() {
        let model = DeepCcp::new(small_config()).unwrap();
        let params = model.init_params(12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut h = Tensor::zeros(&[1, 6]);
        for _ in 0..5 {
            let x = Tensor::matrix(1, 6, (0..6).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
            h = model.gru_step(&mut Eager, &params.tensors, &x, &h).unwrap();
            // A convex mix of values in (−1, 1) starting from 0 stays inside.
            assert!(h.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_refusal() {
        let model = DeepCcp::new(small_config()).unwrap();
        let schema = EncodingSchema::new(vec![3, 2, 2], 3, 100).unwrap();
        let params = model.init_params(1);
        let ckpt = ModelCheckpoint::new(&model, &schema, &params);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = ModelCheckpoint::read_from(buf.as_slice()).unwrap();
        let (m2, p2) = back.restore().unwrap();
        assert_eq!(m2.config(), model.config());
        assert_eq!(p2, params);

        let mut bad = back.clone();
        bad.params.tensors[3].shape = vec![1];
        assert!(bad.restore().is_err());
    }
}
