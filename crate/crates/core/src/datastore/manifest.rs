use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{read_features, FeatureSequence};
use crate::error::{Error, Result};

pub const DEFAULT_FRAMES_PER_SEGMENT: u32 = 16;

/// One manifest entry: a feature file, its video-level label and optional
/// per-segment ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub id: String,
    pub feature_path: String,
    pub label: u8,
    pub segment_labels: Option<Vec<u8>>,
    pub frames_per_segment: u32,
}

impl VideoRecord {
    /// Checks label/segment-label agreement: a video is anomalous iff any
    /// segment is.
    pub fn check_mil(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: format!("label must be 0 or 1, got {}", self.label),
            });
        }
        if self.frames_per_segment == 0 {
            return Err(Error::InvalidRecord {
                id: self.id.clone(),
                message: "frames_per_segment must be positive".into(),
            });
        }
        if let Some(seg) = &self.segment_labels {
            let implied = u8::from(seg.contains(&1));
            if implied != self.label {
                return Err(Error::MilInconsistent {
                    id: self.id.clone(),
                    label: self.label,
                    implied,
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    features: String,
    label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_per_segment: Option<u32>,
}

fn parse_segment_labels(raw: &str) -> std::result::Result<Vec<u8>, String> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|tok| match tok.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(format!("segment label {other:?} is not 0 or 1")),
        })
        .collect()
}

fn format_segment_labels(labels: &[u8]) -> String {
    labels
        .iter()
        .map(u8::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn resolve(base: &Path, feature_path: &str) -> PathBuf {
    let p = Path::new(feature_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses a JSON-lines manifest and validates every record against its
/// feature file. Relative feature paths are resolved against the manifest's
/// directory and stored resolved in the returned records.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
            line,
            message: e.to_string(),
        })?;
        let segment_labels = entry
            .segment_labels
            .as_deref()
            .map(parse_segment_labels)
            .transpose()
            .map_err(|message| Error::ManifestParse { line, message })?;
        let resolved = resolve(base, &entry.features);
        if !resolved.is_file() {
            return Err(Error::DanglingFeature {
                line,
                path: resolved,
            });
        }
        let record = VideoRecord {
            id: entry.id,
            feature_path: resolved.to_string_lossy().into_owned(),
            label: entry.label,
            segment_labels,
            frames_per_segment: entry
                .frames_per_segment
                .unwrap_or(DEFAULT_FRAMES_PER_SEGMENT),
        };
        record.check_mil()?;
        if let Some(seg) = &record.segment_labels {
            let seq = read_features(&resolved)?;
            if seq.len() != seg.len() {
                return Err(Error::InvalidRecord {
                    id: record.id.clone(),
                    message: format!(
                        "{} segment labels but feature file has T={}",
                        seg.len(),
                        seq.len()
                    ),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        let line = ManifestLine {
            id: r.id.clone(),
            features: r.feature_path.clone(),
            label: r.label,
            segment_labels: r.segment_labels.as_deref().map(format_segment_labels),
            frames_per_segment: Some(r.frames_per_segment),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Loads the feature sequence behind every record, keeping the record id.
pub fn load_dataset(records: &[VideoRecord]) -> Result<Vec<FeatureSequence>> {
    records
        .iter()
        .map(|r| {
            let mut seq = read_features(&r.feature_path)?;
            seq.id = r.id.clone();
            Ok(seq)
        })
        .collect()
}
