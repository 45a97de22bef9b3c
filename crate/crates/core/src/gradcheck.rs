//! Central finite-difference certification of the full training objective's
//! parameter gradient.
//!
//! The objective is piecewise smooth: it has kinks wherever a ReLU input
//! crosses zero. A coordinate whose `±eps` probe flips any ReLU gate is
//! checked with the one-sided difference from the side that keeps the gate
//! pattern intact; if both sides flip a gate the coordinate is counted as
//! skipped and reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datastore::FeatureSequence;
use crate::error::Result;
use crate::losses::LossWeights;
use crate::model::{
    attention_forward, classifier_forward, init_params, pool, ModelConfig, ModelParams,
};
use crate::trainer::{batch_loss, batch_objective, PairExample};

/// Relative errors are measured as `|a - n| / max(|a|, |n|, FLOOR)`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances: usize,
    pub max_t: usize,
    pub max_d: usize,
    pub batch: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Test-only fault injection: corrupts one analytic coordinate.
    pub perturb_grad: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            max_t: 16,
            max_d: 8,
            batch: 2,
            eps: 1e-5,
            tolerance: 1e-4,
            perturb_grad: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCoordinate {
    pub instance: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst: Option<WorstCoordinate>,
    pub coordinates: usize,
    /// Coordinates checked with a one-sided difference (a gate flipped on the other side).
    pub one_sided: usize,
    /// Coordinates where both probes flipped a gate.
    pub skipped: usize,
    pub instances: usize,
    pub passed: bool,
}

fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
    let data = (0..t * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    FeatureSequence::new("gc", t, d, data).expect("finite by construction")
}

/// A random model, batch and weight setting.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    opts: &GradcheckOptions,
) -> Result<(ModelParams, Vec<PairExample>, LossWeights)> {
    let d = rng.random_range(1..=opts.max_d.max(1));
    let cfg = ModelConfig {
        input_dim: d,
        conv_kernel: 3,
        conv_channels: d,
        attn_hidden: 16,
        clf_hidden: 8,
        seed: rng.random(),
    };
    let mut params = init_params(&cfg)?;
    for t in params.tensors_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    let batch = (0..opts.batch.max(1))
        .map(|_| {
            let t = rng.random_range(1..=opts.max_t.max(1));
            PairExample {
                view_a: random_seq(rng, t, d),
                view_b: random_seq(rng, t, d),
                label: rng.random_range(0..2u8),
            }
        })
        .collect();
    let weights = LossWeights {
        alpha: rng.random_range(0.1..1.0),
        beta: rng.random_range(0.1..1.0),
        gamma: rng.random_range(0.1..1.0),
    };
    Ok((params, batch, weights))
}

fn coordinate_name(params: &ModelParams, mut flat: usize) -> (String, usize) {
    for t in params.tensors() {
        if flat < t.len() {
            return (t.name.to_string(), flat);
        }
        flat -= t.len();
    }
    unreachable!("coordinate out of range")
}

/// Sign pattern of every ReLU input over the batch.
fn gate_pattern(params: &ModelParams, batch: &[PairExample]) -> Result<Vec<bool>> {
    let mut gates = Vec::new();
    for ex in batch {
        for view in [&ex.view_a, &ex.view_b] {
            let att = attention_forward(params, view)?;
            gates.extend(att.conv_pre.iter().map(|&v| v > 0.0));
            gates.extend(att.hidden_pre.iter().map(|&v| v > 0.0));
            let pooled = pool(&att.input, view.dim(), &att.lambda);
            let clf = classifier_forward(params, &pooled)?;
            gates.extend(clf.hidden_pre.iter().map(|&v| v > 0.0));
        }
    }
    Ok(gates)
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let (mut coordinates, mut one_sided, mut skipped) = (0, 0, 0);
    for instance in 0..opts.instances {
        let (params, batch, weights) = random_instance(&mut rng, opts)?;
        let (base, grads) = batch_objective(&params, &batch, &weights)?;
        let base_gates = gate_pattern(&params, &batch)?;
        let mut analytic = grads.flat();
        if opts.perturb_grad && instance == 0 {
            analytic[0] += 1e-2 * analytic[0].abs().max(1.0);
        }
        for (i, &an) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            *plus.coord_mut(i).expect("in range").1 += opts.eps;
            let mut minus = params.clone();
            *minus.coord_mut(i).expect("in range").1 -= opts.eps;
            let fp = batch_loss(&plus, &batch, &weights)?.total;
            let fm = batch_loss(&minus, &batch, &weights)?.total;
            let plus_ok = gate_pattern(&plus, &batch)? == base_gates;
            let minus_ok = gate_pattern(&minus, &batch)? == base_gates;
            let numeric = match (plus_ok, minus_ok) {
                (true, true) => (fp - fm) / (2.0 * opts.eps),
                (true, false) => {
                    one_sided += 1;
                    (fp - base.total) / opts.eps
                }
                (false, true) => {
                    one_sided += 1;
                    (base.total - fm) / opts.eps
                }
                (false, false) => {
                    skipped += 1;
                    continue;
                }
            };
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            coordinates += 1;
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                let (tensor, index) = coordinate_name(&params, i);
                worst = Some(WorstCoordinate {
                    instance,
                    tensor,
                    index,
                    analytic: an,
                    numeric,
                });
            }
        }
    }
    Ok(GradcheckReport {
        max_rel_err: max_rel,
        worst,
        coordinates,
        one_sided,
        skipped,
        instances: opts.instances,
        passed: max_rel < opts.tolerance,
    })
}
