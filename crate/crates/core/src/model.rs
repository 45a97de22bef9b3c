//! Attention network: causal temporal convolution, a two-layer attention head
//! producing one coefficient per step, weighted temporal pooling, and a
//! two-layer classifier on the pooled vector.
//!
//! ```text
//! x_t --conv(K, causal)--> ReLU --FC--> ReLU --FC--> sigmoid = lambda_t
//! pooled = sum_t lambda_t * x_t
//! prob   = sigmoid(FC(ReLU(FC(pooled))))
//! ```
//!
//! All arithmetic is `f64`; reductions run left to right so results are
//! bitwise reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::FeatureSequence;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TANM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub attn_hidden: usize,
    pub clf_hidden: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default widths for a given feature dimension.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            conv_kernel: 3,
            conv_channels: input_dim,
            attn_hidden: 64,
            clf_hidden: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("conv_kernel", self.conv_kernel),
            ("conv_channels", self.conv_channels),
            ("attn_hidden", self.attn_hidden),
            ("clf_hidden", self.clf_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &'static str, dims: &[usize]) -> Self {
        Self {
            name,
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    fn uniform(name: &'static str, dims: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let n = dims.iter().product();
        Self {
            name,
            dims: dims.to_vec(),
            data: (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Every learnable weight. The same struct doubles as the gradient
/// accumulator ([`ParamGrads`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `[channels, kernel, input_dim]`; kernel slot `K-1` sees the current step.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub attn_w1: Tensor,
    pub attn_b1: Tensor,
    pub attn_w2: Tensor,
    pub attn_b2: Tensor,
    pub clf_w1: Tensor,
    pub clf_b1: Tensor,
    pub clf_w2: Tensor,
    pub clf_b2: Tensor,
}

pub type ParamGrads = ModelParams;

pub const NUM_TENSORS: usize = 10;

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig {
            input_dim: d,
            conv_kernel: k,
            conv_channels: c,
            attn_hidden: h,
            clf_hidden: hc,
            ..
        } = config;
        Self {
            config,
            conv_w: Tensor::zeros("conv_w", &[c, k, d]),
            conv_b: Tensor::zeros("conv_b", &[c]),
            attn_w1: Tensor::zeros("attn_w1", &[h, c]),
            attn_b1: Tensor::zeros("attn_b1", &[h]),
            attn_w2: Tensor::zeros("attn_w2", &[1, h]),
            attn_b2: Tensor::zeros("attn_b2", &[1]),
            clf_w1: Tensor::zeros("clf_w1", &[hc, d]),
            clf_b1: Tensor::zeros("clf_b1", &[hc]),
            clf_w2: Tensor::zeros("clf_w2", &[1, hc]),
            clf_b2: Tensor::zeros("clf_b2", &[1]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Tensors in declaration order (the checkpoint and optimizer order).
    pub fn tensors(&self) -> [&Tensor; NUM_TENSORS] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.attn_w1,
            &self.attn_b1,
            &self.attn_w2,
            &self.attn_b2,
            &self.clf_w1,
            &self.clf_b1,
            &self.clf_w2,
            &self.clf_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; NUM_TENSORS] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.attn_w1,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.attn_b2,
            &mut self.clf_w1,
            &mut self.clf_b1,
            &mut self.clf_w2,
            &mut self.clf_b2,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.dims == b.dims)
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view over all coordinates, declaration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Mutable access to the `i`-th coordinate of the flat view.
    pub fn coord_mut(&mut self, mut i: usize) -> Option<(&'static str, &mut f64)> {
        for t in self.tensors_mut() {
            if i < t.data.len() {
                return Some((t.name, &mut t.data[i]));
            }
            i -= t.data.len();
        }
        None
    }
}

/// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`,
/// biases zero.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let ModelConfig {
        input_dim: d,
        conv_kernel: k,
        conv_channels: c,
        attn_hidden: h,
        clf_hidden: hc,
        seed,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(*config);
    p.conv_w = Tensor::uniform("conv_w", &[c, k, d], k * d, &mut rng);
    p.attn_w1 = Tensor::uniform("attn_w1", &[h, c], c, &mut rng);
    p.attn_w2 = Tensor::uniform("attn_w2", &[1, h], h, &mut rng);
    p.clf_w1 = Tensor::uniform("clf_w1", &[hc, d], d, &mut rng);
    p.clf_w2 = Tensor::uniform("clf_w2", &[1, hc], hc, &mut rng);
    Ok(p)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Attention-head activations for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `T x D` inputs widened to f64.
    pub input: Vec<f64>,
    /// `T x C` pre-activation conv outputs.
    pub conv_pre: Vec<f64>,
    /// `T x H` pre-activation hidden layer.
    pub hidden_pre: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Classifier activations for one input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrace {
    pub hidden_pre: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub attention: AttentionTrace,
    pub pooled: Vec<f64>,
    pub classifier: ClassifierTrace,
}

impl ForwardTrace {
    pub fn lambda(&self) -> &[f64] {
        &self.attention.lambda
    }

    pub fn prob(&self) -> f64 {
        self.classifier.prob
    }

    pub fn len(&self) -> usize {
        self.attention.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attention.lambda.is_empty()
    }
}

fn check_dim(params: &ModelParams, d: usize) -> Result<()> {
    if d != params.config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.config.input_dim,
            found: d,
        });
    }
    Ok(())
}

pub fn attention_forward(params: &ModelParams, seq: &FeatureSequence) -> Result<AttentionTrace> {
    check_dim(params, seq.dim())?;
    let ModelConfig {
        input_dim: d,
        conv_kernel: k,
        conv_channels: c,
        attn_hidden: h,
        ..
    } = params.config;
    let t_len = seq.len();
    let input: Vec<f64> = seq.data().iter().map(|&v| f64::from(v)).collect();

    let mut conv_pre = vec![0.0; t_len * c];
    let mut hidden_pre = vec![0.0; t_len * h];
    let mut lambda = vec![0.0; t_len];
    let mut conv_act = vec![0.0; c];
    let mut hidden_act = vec![0.0; h];
    for t in 0..t_len {
        for ch in 0..c {
            let mut acc = params.conv_b.data[ch];
            for tap in 0..k {
                // tap K-1 is the current step, tap 0 is K-1 steps back
                let Some(src) = (t + tap + 1).checked_sub(k) else {
                    continue;
                };
                let w = &params.conv_w.data[(ch * k + tap) * d..(ch * k + tap + 1) * d];
                let x = &input[src * d..(src + 1) * d];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
            }
            conv_pre[t * c + ch] = acc;
            conv_act[ch] = relu(acc);
        }
        for j in 0..h {
            let w = &params.attn_w1.data[j * c..(j + 1) * c];
            let mut acc = params.attn_b1.data[j];
            for (wi, xi) in w.iter().zip(&conv_act) {
                acc += wi * xi;
            }
            hidden_pre[t * h + j] = acc;
            hidden_act[j] = relu(acc);
        }
        let mut z = params.attn_b2.data[0];
        for (wi, xi) in params.attn_w2.data.iter().zip(&hidden_act) {
            z += wi * xi;
        }
        lambda[t] = sigmoid(z);
    }
    Ok(AttentionTrace {
        input,
        conv_pre,
        hidden_pre,
        lambda,
    })
}

/// Per-step attention coefficients in (0, 1). Step `t` depends only on rows `<= t`.
pub fn attention_scores(params: &ModelParams, seq: &FeatureSequence) -> Result<Vec<f64>> {
    Ok(attention_forward(params, seq)?.lambda)
}

/// Weighted temporal pooling `sum_t lambda_t * x_t`, accumulated left to right.
pub fn pool(input: &[f64], dim: usize, lambda: &[f64]) -> Vec<f64> {
    let mut pooled = vec![0.0; dim];
    for (row, &l) in input.chunks_exact(dim).zip(lambda) {
        for (p, x) in pooled.iter_mut().zip(row) {
            *p += l * x;
        }
    }
    pooled
}

pub fn classifier_forward(params: &ModelParams, x: &[f64]) -> Result<ClassifierTrace> {
    check_dim(params, x.len())?;
    let d = params.config.input_dim;
    let hc = params.config.clf_hidden;
    let mut hidden_pre = vec![0.0; hc];
    let mut logit = params.clf_b2.data[0];
    for (i, pre) in hidden_pre.iter_mut().enumerate() {
        let w = &params.clf_w1.data[i * d..(i + 1) * d];
        let mut acc = params.clf_b1.data[i];
        for (wi, xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        *pre = acc;
        logit += params.clf_w2.data[i] * relu(acc);
    }
    Ok(ClassifierTrace {
        hidden_pre,
        logit,
        prob: sigmoid(logit),
    })
}

/// Classifier probability for one feature vector.
pub fn classify_single(params: &ModelParams, x: &[f64]) -> Result<f64> {
    Ok(classifier_forward(params, x)?.prob)
}

pub fn forward(params: &ModelParams, seq: &FeatureSequence) -> Result<ForwardTrace> {
    let attention = attention_forward(params, seq)?;
    let pooled = pool(&attention.input, seq.dim(), &attention.lambda);
    let classifier = classifier_forward(params, &pooled)?;
    Ok(ForwardTrace {
        attention,
        pooled,
        classifier,
    })
}

/// Accumulates into `grads` the parameter gradient of a scalar loss whose
/// partial derivatives w.r.t. this trace's outputs are `d_lambda` (per step,
/// excluding the path through pooling) and `d_prob`.
#[allow(clippy::needless_range_loop)]
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_lambda: &[f64],
    d_prob: f64,
    grads: &mut ParamGrads,
) -> Result<()> {
    let ModelConfig {
        input_dim: d,
        conv_kernel: k,
        conv_channels: c,
        attn_hidden: h,
        clf_hidden: hc,
        ..
    } = params.config;
    let t_len = trace.len();
    if d_lambda.len() != t_len {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            found: d_lambda.len(),
        });
    }
    if trace.pooled.len() != d
        || trace.attention.conv_pre.len() != t_len * c
        || !params.same_shape(grads)
    {
        return Err(Error::Shape(
            "trace or gradient buffer does not match params".into(),
        ));
    }
    let att = &trace.attention;
    let clf = &trace.classifier;

    // classifier
    let d_logit = d_prob * clf.prob * (1.0 - clf.prob);
    grads.clf_b2.data[0] += d_logit;
    let mut d_pooled = vec![0.0; d];
    for i in 0..hc {
        let pre = clf.hidden_pre[i];
        grads.clf_w2.data[i] += d_logit * relu(pre);
        if pre <= 0.0 {
            continue;
        }
        let d_pre = d_logit * params.clf_w2.data[i];
        grads.clf_b1.data[i] += d_pre;
        let w = &params.clf_w1.data[i * d..(i + 1) * d];
        let gw = &mut grads.clf_w1.data[i * d..(i + 1) * d];
        for q in 0..d {
            gw[q] += d_pre * trace.pooled[q];
            d_pooled[q] += d_pre * w[q];
        }
    }

    // pooling and attention head
    let mut d_conv_act = vec![0.0; c];
    for t in 0..t_len {
        let x = &att.input[t * d..(t + 1) * d];
        let mut dl = d_lambda[t];
        for (g, xi) in d_pooled.iter().zip(x) {
            dl += g * xi;
        }
        let lam = att.lambda[t];
        let dz = dl * lam * (1.0 - lam);
        grads.attn_b2.data[0] += dz;

        d_conv_act.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..h {
            let pre = att.hidden_pre[t * h + j];
            grads.attn_w2.data[j] += dz * relu(pre);
            if pre <= 0.0 {
                continue;
            }
            let d_pre = dz * params.attn_w2.data[j];
            grads.attn_b1.data[j] += d_pre;
            let w = &params.attn_w1.data[j * c..(j + 1) * c];
            let gw = &mut grads.attn_w1.data[j * c..(j + 1) * c];
            for ch in 0..c {
                gw[ch] += d_pre * relu(att.conv_pre[t * c + ch]);
                d_conv_act[ch] += d_pre * w[ch];
            }
        }

        for ch in 0..c {
            if att.conv_pre[t * c + ch] <= 0.0 {
                continue;
            }
            let d_pre = d_conv_act[ch];
            grads.conv_b.data[ch] += d_pre;
            for tap in 0..k {
                let Some(src) = (t + tap + 1).checked_sub(k) else {
                    continue;
                };
                let xs = &att.input[src * d..(src + 1) * d];
                let gw = &mut grads.conv_w.data[(ch * k + tap) * d..(ch * k + tap + 1) * d];
                for (g, xi) in gw.iter_mut().zip(xs) {
                    *g += d_pre * xi;
                }
            }
        }
    }
    Ok(())
}

fn push_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Checkpoint layout: `TANM`, u16 version, the model config (five u32 widths
/// and a u64 seed), then every tensor in declaration order as
/// `rank:u32, dims:u32*rank, data:f32*numel`, all little-endian.
pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let cfg = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.input_dim,
        cfg.conv_kernel,
        cfg.conv_channels,
        cfg.attn_hidden,
        cfg.clf_hidden,
    ] {
        push_u32(&mut buf, v)?;
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    for t in params.tensors() {
        push_u32(&mut buf, t.dims.len())?;
        for &dim in &t.dims {
            push_u32(&mut buf, dim)?;
        }
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "TANM",
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: version,
        });
    }
    let config = ModelConfig {
        input_dim: r.u32()?,
        conv_kernel: r.u32()?,
        conv_channels: r.u32()?,
        attn_hidden: r.u32()?,
        clf_hidden: r.u32()?,
        seed: u64::from_le_bytes(r.take(8)?.try_into().unwrap()),
    };
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    for t in params.tensors_mut() {
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if dims != t.dims {
            return Err(Error::Shape(format!(
                "{}: checkpoint dims {:?}, config implies {:?}",
                t.name, dims, t.dims
            )));
        }
        let raw = r.take(t.data.len() * 4)?;
        for (v, c) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected: r.pos as u64,
            found: bytes.len() as u64,
        });
    }
    if !params.is_finite() {
        return Err(Error::Shape("checkpoint contains non-finite values".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_checkpoint(params)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand_distr::StandardNormal;

    pub fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
        let data = (0..t * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        FeatureSequence::new("r", t, d, data).unwrap()
    }

    /// Random params with nonzero biases so every code path is exercised.
    pub fn random_params(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams {
        let mut p = init_params(&cfg).unwrap();
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    pub fn small_config(d: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            attn_hidden: 10,
            clf_hidden: 6,
            seed,
            ..ModelConfig::new(d)
        }
    }
}
