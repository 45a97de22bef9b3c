use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{write_features, FeatureSequence};
use super::manifest::{write_manifest, VideoRecord, DEFAULT_FRAMES_PER_SEGMENT};
use crate::error::{Error, Result};

/// Parameters of the planted-anomaly generator.
///
/// Normal segments are isotropic Gaussian noise around a unit "normal"
/// direction. Anomalous videos carry one contiguous window shifted by
/// `anomaly_shift` along a second direction orthogonal to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub t_range: (usize, usize),
    pub dim: usize,
    pub anomaly_fraction: f64,
    pub anomaly_window_range: (usize, usize),
    pub noise_scale: f64,
    pub anomaly_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 40,
            t_range: (20, 40),
            dim: 16,
            anomaly_fraction: 0.5,
            anomaly_window_range: (4, 8),
            noise_scale: 0.5,
            anomaly_shift: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (tmin, tmax) = self.t_range;
        let (wmin, wmax) = self.anomaly_window_range;
        if self.num_videos == 0 {
            return Err(Error::Config("num_videos must be positive".into()));
        }
        if tmin == 0 || tmin > tmax {
            return Err(Error::Config(format!("bad T range [{tmin}, {tmax}]")));
        }
        if self.dim < 2 {
            return Err(Error::Config(
                "dim must be at least 2 to hold orthogonal normal/anomaly directions".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return Err(Error::Config(format!(
                "anomaly_fraction {} outside [0, 1]",
                self.anomaly_fraction
            )));
        }
        if wmin == 0 || wmin > wmax {
            return Err(Error::Config(format!(
                "bad anomaly window range [{wmin}, {wmax}]"
            )));
        }
        if wmax > tmin {
            return Err(Error::Config(format!(
                "anomaly window up to {wmax} does not fit in sequences as short as {tmin}"
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(
                "noise_scale must be finite and nonnegative".into(),
            ));
        }
        if !self.anomaly_shift.is_finite() {
            return Err(Error::Config("anomaly_shift must be finite".into()));
        }
        Ok(())
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Deterministically generates `cfg.num_videos` sequences and records.
/// Record `feature_path`s are bare file names (`<id>.fseq`).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<FeatureSequence>, Vec<VideoRecord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;

    let normal_dir = unit_gaussian(&mut rng, dim);
    let mut anomaly_dir = unit_gaussian(&mut rng, dim);
    let proj: f64 = anomaly_dir
        .iter()
        .zip(&normal_dir)
        .map(|(a, n)| a * n)
        .sum();
    for (a, n) in anomaly_dir.iter_mut().zip(&normal_dir) {
        *a -= proj * n;
    }
    let norm = anomaly_dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    anomaly_dir.iter_mut().for_each(|a| *a /= norm);

    let n_anomalous = (cfg.anomaly_fraction * cfg.num_videos as f64).round() as usize;
    let mut anomalous = vec![false; cfg.num_videos];
    anomalous[..n_anomalous].iter_mut().for_each(|a| *a = true);
    anomalous.shuffle(&mut rng);

    let width = (cfg.num_videos - 1).to_string().len().max(4);
    let mut seqs = Vec::with_capacity(cfg.num_videos);
    let mut records = Vec::with_capacity(cfg.num_videos);
    for (i, &is_anomalous) in anomalous.iter().enumerate() {
        let id = format!("vid_{i:0width$}");
        let t = rng.random_range(cfg.t_range.0..=cfg.t_range.1);
        let mut labels = vec![0u8; t];
        if is_anomalous {
            let w = rng.random_range(cfg.anomaly_window_range.0..=cfg.anomaly_window_range.1);
            let start = rng.random_range(0..=t - w);
            labels[start..start + w].iter_mut().for_each(|l| *l = 1);
        }
        let mut data = Vec::with_capacity(t * dim);
        for &lab in &labels {
            let shift = if lab == 1 { cfg.anomaly_shift } else { 0.0 };
            for k in 0..dim {
                let eps: f64 = rng.sample(StandardNormal);
                let v = normal_dir[k] + shift * anomaly_dir[k] + cfg.noise_scale * eps;
                data.push(v as f32);
            }
        }
        seqs.push(FeatureSequence::new(id.clone(), t, dim, data)?);
        records.push(VideoRecord {
            feature_path: format!("{id}.fseq"),
            id,
            label: u8::from(is_anomalous),
            segment_labels: Some(labels),
            frames_per_segment: DEFAULT_FRAMES_PER_SEGMENT,
        });
    }
    Ok((seqs, records))
}

/// Writes every sequence as `<dir>/<id>.fseq` plus `<dir>/manifest.jsonl`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    seqs: &[FeatureSequence],
    records: &[VideoRecord],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (seq, rec) in seqs.iter().zip(records) {
        write_features(seq, dir.join(&rec.feature_path))?;
    }
    write_manifest(dir.join("manifest.jsonl"), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_normal_video() {
        let cfg = SynthConfig {
            num_videos: 1,
            anomaly_fraction: 0.0,
            ..Default::default()
        };
        let (seqs, recs) = generate_synthetic(&cfg).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(recs[0].label, 0);
        assert!(recs[0]
            .segment_labels
            .as_ref()
            .unwrap()
            .iter()
            .all(|&l| l == 0));
    }

    #[test]
    fn fixed_window_all_anomalous() {
        let cfg = SynthConfig {
            num_videos: 25,
            anomaly_fraction: 1.0,
            anomaly_window_range: (3, 3),
            ..Default::default()
        };
        let (seqs, recs) = generate_synthetic(&cfg).unwrap();
        for (seq, rec) in seqs.iter().zip(&recs) {
            let seg = rec.segment_labels.as_ref().unwrap();
            assert_eq!(seg.len(), seq.len());
            assert_eq!(rec.label, 1);
            let ones: Vec<usize> = (0..seg.len()).filter(|&i| seg[i] == 1).collect();
            assert_eq!(ones.len(), 3);
            assert_eq!(ones[2] - ones[0], 2);
            rec.check_mil().unwrap();
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            seed: 99,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn fraction_is_honored() {
        let cfg = SynthConfig {
            num_videos: 40,
            anomaly_fraction: 0.25,
            ..Default::default()
        };
        let (_, recs) = generate_synthetic(&cfg).unwrap();
        assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 10);
    }

    #[test]
    fn infeasible_window() {
        let cfg = SynthConfig {
            t_range: (4, 8),
            anomaly_window_range: (10, 10),
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn anomalous_rows_are_shifted() {
        let cfg = SynthConfig {
            num_videos: 4,
            anomaly_fraction: 1.0,
            noise_scale: 0.0,
            ..Default::default()
        };
        let (seqs, recs) = generate_synthetic(&cfg).unwrap();
        let seg = recs[0].segment_labels.as_ref().unwrap();
        let normal = seg.iter().position(|&l| l == 0).unwrap();
        let anom = seg.iter().position(|&l| l == 1).unwrap();
        let diff: f32 = seqs[0]
            .row(anom)
            .iter()
            .zip(seqs[0].row(normal))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt();
        assert!((diff - 3.0).abs() < 1e-5, "shift norm {diff}");
    }
}
