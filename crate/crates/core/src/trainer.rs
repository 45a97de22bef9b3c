//! Mini-batch Adam training over view pairs.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{identity_view, make_views, AugmentConfig};
use crate::datastore::FeatureSequence;
use crate::error::{Error, Result};
use crate::losses::{objective, objective_grads, LossBreakdown, LossWeights};
use crate::model::{backward, forward, init_params, ModelConfig, ModelParams, ParamGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_phase1: f64,
    pub epochs_phase1: usize,
    pub lr_phase2: f64,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_phase1: 1e-4,
            epochs_phase1: 10,
            lr_phase2: 1e-5,
            epochs_phase2: 40,
            batch_size: 8,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_phase1 > 0.0 && self.lr_phase2 > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        self.weights.validate()?;
        self.augment.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    /// Learning rate for a 1-based epoch number.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch <= self.epochs_phase1 {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. Gradients are checked for
/// finiteness before anything is modified.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Shape(
            "params, gradients and Adam state disagree".into(),
        ));
    }
    for t in grads.tensors() {
        if let Some(index) = t.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: t.name,
                index,
            });
        }
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, eps } = hyper;
    let bc1 = 1.0 - beta1.powf(state.step as f64);
    let bc2 = 1.0 - beta2.powf(state.step as f64);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Two views of one video plus its label.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub view_a: FeatureSequence,
    pub view_b: FeatureSequence,
    pub label: u8,
}

/// Batch-mean objective and its gradient w.r.t. every parameter.
pub fn batch_objective(
    params: &ModelParams,
    batch: &[PairExample],
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grads = params.zeros_like();
    let mut parts = Vec::with_capacity(batch.len());
    for ex in batch {
        let ta = forward(params, &ex.view_a)?;
        let tb = forward(params, &ex.view_b)?;
        parts.push(objective((&ta).into(), (&tb).into(), ex.label, weights)?);
        let g = objective_grads((&ta).into(), (&tb).into(), ex.label, weights)?;
        backward(params, &ta, &g.d_lambda_a, g.d_prob_a, &mut grads)?;
        backward(params, &tb, &g.d_lambda_b, g.d_prob_b, &mut grads)?;
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((LossBreakdown::mean(&parts), grads))
}

/// Batch-mean objective only.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[PairExample],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut parts = Vec::with_capacity(batch.len());
    for ex in batch {
        let ta = forward(params, &ex.view_a)?;
        let tb = forward(params, &ex.view_b)?;
        parts.push(objective((&ta).into(), (&tb).into(), ex.label, weights)?);
    }
    Ok(LossBreakdown::mean(&parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub cl: f64,
    pub sp: f64,
    pub sm: f64,
    pub a: f64,
    pub total: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Progress notifications emitted by [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Epoch(&'a EpochLog),
    /// End of phase 1 (`phase = 1`) or of training (`phase = 2`).
    PhaseEnd {
        phase: u8,
        params: &'a ModelParams,
    },
}

/// Trains from scratch. `labels[i]` is the video-level label of `seqs[i]`.
///
/// Every epoch reshuffles the examples and draws a fresh view pair per
/// example. Adam state carries over the learning-rate change.
pub fn train(
    model_cfg: &ModelConfig,
    seqs: &[FeatureSequence],
    labels: &[u8],
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    if seqs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: seqs.len(),
            found: labels.len(),
        });
    }
    let mut params = init_params(model_cfg)?;
    if let Some(bad) = seqs.iter().find(|s| s.dim() != model_cfg.input_dim) {
        return Err(Error::DimensionMismatch {
            expected: model_cfg.input_dim,
            found: bad.dim(),
        });
    }
    let hyper = AdamHyper {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.augment.seed);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    if cfg.epochs_phase1 == 0 && cfg.epochs_phase2 == 0 {
        observer(TrainEvent::PhaseEnd {
            phase: 1,
            params: &params,
        })?;
    }
    for epoch in 1..=cfg.total_epochs() {
        let started = Instant::now();
        let lr = cfg.lr_for_epoch(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut parts = Vec::with_capacity(seqs.len());
        for (batch_id, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<PairExample> = chunk
                .iter()
                .map(|&i| {
                    let views = make_views(&seqs[i], &cfg.augment, &mut aug_rng);
                    PairExample {
                        view_a: views.view_a,
                        view_b: views.view_b,
                        label: labels[i],
                    }
                })
                .collect();
            let (loss, grads) = batch_objective(&params, &batch, &cfg.weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_id,
                    detail: format!("non-finite loss {loss:?}"),
                });
            }
            adam_step(&mut params, &grads, &mut adam, lr, hyper).map_err(|e| Error::Diverged {
                epoch,
                batch: batch_id,
                detail: e.to_string(),
            })?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_id,
                    detail: "non-finite parameters after update".into(),
                });
            }
            parts.extend(std::iter::repeat_n(loss, chunk.len()));
        }
        let mean = LossBreakdown::mean(&parts);
        let entry = EpochLog {
            epoch,
            cl: mean.cl,
            sp: mean.sp,
            sm: mean.sm,
            a: mean.a,
            total: mean.total,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(TrainEvent::Epoch(&entry))?;
        log.epochs.push(entry);
        if epoch == cfg.epochs_phase1 && cfg.epochs_phase2 > 0 {
            observer(TrainEvent::PhaseEnd {
                phase: 1,
                params: &params,
            })?;
        }
    }
    observer(TrainEvent::PhaseEnd {
        phase: 2,
        params: &params,
    })?;
    Ok((params, log))
}

/// Mean objective over a labelled set using deterministic identity views
/// (so the alignment term is zero). Does not touch the parameters.
pub fn evaluate_epoch(
    params: &ModelParams,
    seqs: &[FeatureSequence],
    labels: &[u8],
    augment: &AugmentConfig,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if seqs.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let batch: Vec<PairExample> = seqs
        .iter()
        .zip(labels)
        .map(|(s, &label)| {
            let v = identity_view(s, augment);
            PairExample {
                view_a: v.clone(),
                view_b: v,
                label,
            }
        })
        .collect();
    batch_loss(params, &batch, weights)
}
