//! ROC AUC, average precision, and the four-granularity evaluation report
//! (video, segment, frame from proposals, frame).
//!
//! Both metrics treat tied scores as a single threshold, so neither depends
//! on the order of equal-scored items.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datastore::{FeatureSequence, VideoRecord};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::proposals::{compute_tcam, interpolate_frames, proposals_from_trace, ScoreTrace};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                found: labels.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Degenerate("non-finite score".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Degenerate("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn extend(&mut self, scores: &[f64], labels: &[u8]) {
        self.scores.extend_from_slice(scores);
        self.labels.extend_from_slice(labels);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Indices by descending score, ascending index on ties.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    // walk from the highest score down; for each tie group, every positive
    // beats all negatives below the group and half-beats those inside it
    let order = set.ranked();
    let mut negatives_below = neg as f64;
    let mut wins = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        let mut j = i;
        let (mut gp, mut gn) = (0.0, 0.0);
        while j < order.len() && set.scores[order[j]] == s {
            if set.labels[order[j]] == 1 {
                gp += 1.0;
            } else {
                gn += 1.0;
            }
            j += 1;
        }
        negatives_below -= gn;
        wins += gp * (negatives_below + 0.5 * gn);
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Non-interpolated average precision: sum over score thresholds of
/// `(recall_k - recall_{k-1}) * precision_k`.
pub fn ap(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    if pos == 0 {
        return Err(Error::Degenerate("AP needs at least one positive".into()));
    }
    let order = set.ranked();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut total = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        let mut gp = 0;
        while i < order.len() && set.scores[order[i]] == s {
            gp += usize::from(set.labels[order[i]] == 1);
            seen += 1;
            i += 1;
        }
        tp += gp;
        if gp > 0 {
            total += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(total)
}

/// Which per-segment quantity feeds the segment and frame rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Lambda,
    Tcam,
    #[default]
    Wtcam,
}

impl ScoreSource {
    pub fn select<'a>(&self, trace: &'a ScoreTrace) -> &'a [f64] {
        match self {
            ScoreSource::Lambda => &trace.lambda,
            ScoreSource::Tcam => &trace.tcam,
            ScoreSource::Wtcam => &trace.wtcam,
        }
    }
}

impl FromStr for ScoreSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "tcam" => Ok(Self::Tcam),
            "wtcam" => Ok(Self::Wtcam),
            other => Err(format!(
                "unknown score source {other:?} (lambda | tcam | wtcam)"
            )),
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreSource::Lambda => "lambda",
            ScoreSource::Tcam => "tcam",
            ScoreSource::Wtcam => "wtcam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucAp {
    pub auc: f64,
    pub ap: f64,
}

impl AucAp {
    pub fn of(set: &ScoredSet) -> Result<Self> {
        Ok(Self {
            auc: auc(set)?,
            ap: ap(set)?,
        })
    }
}

/// Per-video scores pooled by granularity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub video: ScoredSet,
    pub segment: ScoredSet,
    pub frame_proposal: ScoredSet,
    pub frame: ScoredSet,
    /// `(segment, frame)` sets for each video, for macro averages.
    pub per_video: Vec<(ScoredSet, ScoredSet)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub video: AucAp,
    pub segment: AucAp,
    pub frame_proposal: AucAp,
    pub frame: AucAp,
    /// Mean per-video segment AUC/AP over videos where each is defined.
    pub macro_segment: Option<AucAp>,
    pub macro_frame: Option<AucAp>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let mut s = String::new();
        s.push_str(
            "| Video Level     | Segment Level   | Frame Level Proposal | Frame Level     |\n",
        );
        s.push_str(
            "| AUC%   | AP%    | AUC%   | AP%    | AUC%      | AP%      | AUC%   | AP%    |\n",
        );
        s.push_str(&format!(
            "| {} | {} | {} | {} | {}    | {}   | {} | {} |\n",
            pct(self.video.auc),
            pct(self.video.ap),
            pct(self.segment.auc),
            pct(self.segment.ap),
            pct(self.frame_proposal.auc),
            pct(self.frame_proposal.ap),
            pct(self.frame.auc),
            pct(self.frame.ap),
        ));
        if let (Some(ms), Some(mf)) = (self.macro_segment, self.macro_frame) {
            s.push_str(&format!(
                "macro (per-video mean): segment AUC {} AP {}, frame AUC {} AP {}\n",
                pct(ms.auc),
                pct(ms.ap),
                pct(mf.auc),
                pct(mf.ap)
            ));
        }
        s
    }
}

fn frame_labels(segment_labels: &[u8], fps: usize) -> Vec<u8> {
    segment_labels
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, fps))
        .collect()
}

/// Frame scores from proposals: frames inside a proposal take its score,
/// all other frames zero.
pub fn rasterize_proposals(trace: &ScoreTrace, thr: f64, fps: usize) -> Result<Vec<f64>> {
    let mut frames = vec![0.0; trace.len() * fps];
    for p in proposals_from_trace(trace, thr, fps)? {
        frames[p.frame_start..=p.frame_end]
            .iter_mut()
            .for_each(|f| *f = p.score);
    }
    Ok(frames)
}

/// Runs the model on every video and collects the scored sets.
pub fn collect_scores(
    params: &ModelParams,
    records: &[VideoRecord],
    seqs: &[FeatureSequence],
    thr: f64,
    source: ScoreSource,
) -> Result<EvalScores> {
    let mut out = EvalScores::default();
    for (rec, seq) in records.iter().zip(seqs) {
        let seg_labels = rec.segment_labels.as_ref().ok_or_else(|| {
            Error::MissingGroundTruth(format!("record {} has no segment_labels", rec.id))
        })?;
        if seg_labels.len() != seq.len() {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: "segment_labels length differs from T".into(),
            });
        }
        let fps = rec.frames_per_segment as usize;
        let prob = forward(params, seq)?.prob();
        let trace = compute_tcam(params, seq)?;
        let seg_scores = source.select(&trace);
        let frame_scores = interpolate_frames(seg_scores, fps);
        let flabels = frame_labels(seg_labels, fps);

        out.video.extend(&[prob], &[rec.label]);
        out.segment.extend(seg_scores, seg_labels);
        out.frame.extend(&frame_scores, &flabels);
        out.frame_proposal
            .extend(&rasterize_proposals(&trace, thr, fps)?, &flabels);
        out.per_video.push((
            ScoredSet::new(seg_scores.to_vec(), seg_labels.clone())?,
            ScoredSet::new(frame_scores, flabels)?,
        ));
    }
    Ok(out)
}

fn macro_average<'a>(sets: impl Iterator<Item = &'a ScoredSet>) -> Option<AucAp> {
    let (mut aucs, mut aps) = (Vec::new(), Vec::new());
    for s in sets {
        if let Ok(v) = auc(s) {
            aucs.push(v);
        }
        if let Ok(v) = ap(s) {
            aps.push(v);
        }
    }
    if aucs.is_empty() || aps.is_empty() {
        return None;
    }
    Some(AucAp {
        auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        ap: aps.iter().sum::<f64>() / aps.len() as f64,
    })
}

pub fn report_from_scores(scores: &EvalScores) -> Result<EvalReport> {
    let level = |name: &str, set: &ScoredSet| {
        AucAp::of(set).map_err(|e| Error::Degenerate(format!("{name} level: {e}")))
    };
    Ok(EvalReport {
        video: level("video", &scores.video)?,
        segment: level("segment", &scores.segment)?,
        frame_proposal: level("frame-proposal", &scores.frame_proposal)?,
        frame: level("frame", &scores.frame)?,
        macro_segment: macro_average(scores.per_video.iter().map(|(s, _)| s)),
        macro_frame: macro_average(scores.per_video.iter().map(|(_, f)| f)),
    })
}

pub fn evaluate(
    params: &ModelParams,
    records: &[VideoRecord],
    seqs: &[FeatureSequence],
    thr: f64,
    source: ScoreSource,
) -> Result<EvalReport> {
    report_from_scores(&collect_scores(params, records, seqs, thr, source)?)
}
