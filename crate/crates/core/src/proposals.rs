//! Inference-time post-processing: per-step classifier activations (T-CAM),
//! attention-weighted activations, thresholding into runs, and scored
//! temporal proposals.

use serde::{Deserialize, Serialize};

use crate::datastore::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{attention_scores, classify_single, ModelParams};

pub const DEFAULT_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub lambda: Vec<f64>,
    /// Classifier output on each step's feature vector alone.
    pub tcam: Vec<f64>,
    /// `lambda[t] * tcam[t]`.
    pub wtcam: Vec<f64>,
}

impl ScoreTrace {
    pub fn from_parts(lambda: Vec<f64>, tcam: Vec<f64>) -> Result<Self> {
        if lambda.len() != tcam.len() {
            return Err(Error::DimensionMismatch {
                expected: lambda.len(),
                found: tcam.len(),
            });
        }
        let wtcam = lambda.iter().zip(&tcam).map(|(l, a)| l * a).collect();
        Ok(Self {
            lambda,
            tcam,
            wtcam,
        })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

pub fn compute_tcam(params: &ModelParams, seq: &FeatureSequence) -> Result<ScoreTrace> {
    let lambda = attention_scores(params, seq)?;
    let mut x = vec![0.0; seq.dim()];
    let tcam = seq
        .rows()
        .map(|row| {
            x.iter_mut()
                .zip(row)
                .for_each(|(dst, &v)| *dst = f64::from(v));
            classify_single(params, &x)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTrace::from_parts(lambda, tcam)
}

/// `mask[t] = wtcam[t] >= thr`.
pub fn threshold_filter(trace: &ScoreTrace, thr: f64) -> Vec<bool> {
    trace.wtcam.iter().map(|&w| w >= thr).collect()
}

/// Maximal runs of `true` as inclusive `(start, end)` pairs, in order.
pub fn connected_components(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len() - 1));
    }
    out
}

/// Upsamples segment scores to frames. Segment `t` is anchored at frame
/// `t * fps + fps / 2`; frames between anchors are linearly interpolated and
/// frames outside the first/last anchor take the nearest segment's value.
pub fn interpolate_frames(values: &[f64], frames_per_segment: usize) -> Vec<f64> {
    let fps = frames_per_segment;
    let n = values.len() * fps;
    if values.is_empty() || fps == 0 {
        return Vec::new();
    }
    let half = fps as f64 / 2.0;
    let last = values.len() - 1;
    (0..n)
        .map(|f| {
            let pos = (f as f64 - half) / fps as f64;
            if pos <= 0.0 {
                return values[0];
            }
            let t = pos.floor() as usize;
            if t >= last {
                return values[last];
            }
            let (a, b) = (values[t], values[t + 1]);
            let frac = pos - t as f64;
            (a + frac * (b - a)).clamp(a.min(b), a.max(b))
        })
        .collect()
}

/// Mean weighted activation over an inclusive interval.
pub fn score_proposal(trace: &ScoreTrace, interval: (usize, usize)) -> Result<f64> {
    let (start, end) = interval;
    if start > end || end >= trace.len() {
        return Err(Error::Interval {
            start,
            end,
            len: trace.len(),
        });
    }
    let sum: f64 = trace.wtcam[start..=end].iter().sum();
    Ok(sum / (end - start + 1).max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_start: usize,
    pub t_end: usize,
    pub frame_start: usize,
    pub frame_end: usize,
    pub score: f64,
    /// Set on the longest interval (earliest wins ties).
    pub largest: bool,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.t_end - self.t_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Thresholds, groups and scores an existing trace. Output is sorted by
/// score, highest first; equal scores keep temporal order.
pub fn proposals_from_trace(
    trace: &ScoreTrace,
    thr: f64,
    frames_per_segment: usize,
) -> Result<Vec<Proposal>> {
    let runs = connected_components(&threshold_filter(trace, thr));
    let largest = runs
        .iter()
        .enumerate()
        .fold(None::<(usize, usize)>, |best, (i, &(s, e))| match best {
            Some((_, len)) if len > e - s => best,
            _ => Some((i, e - s + 1)),
        })
        .map(|(i, _)| i);
    let mut out = runs
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            Ok(Proposal {
                t_start: s,
                t_end: e,
                frame_start: s * frames_per_segment,
                frame_end: (e + 1) * frames_per_segment - 1,
                score: score_proposal(trace, (s, e))?,
                largest: Some(i) == largest,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

pub fn generate_proposals(
    params: &ModelParams,
    seq: &FeatureSequence,
    thr: f64,
    frames_per_segment: usize,
) -> Result<Vec<Proposal>> {
    proposals_from_trace(&compute_tcam(params, seq)?, thr, frames_per_segment)
}

/// One line of the proposal output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalLine {
    pub id: String,
    #[serde(flatten)]
    pub proposal: Proposal,
}
