//! Detection accuracy against annotated attention intervals.

use serde::{Deserialize, Serialize};

use crate::episode::EpisodeSet;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::session::{Annotation, AnnotationLabel};

/// Change-point detection score: the fraction of detected episodes whose
/// onset matches an annotated attention interval, and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// Episodes matching an attention interval.
    pub n_valid: usize,
    /// All detected episodes, artifacts included.
    pub n_total: usize,
    /// `n_valid / n_total` (0 when nothing was detected).
    pub d_acc: f64,
    /// Exactly `1 - d_acc`.
    pub n_p: f64,
    pub tolerance_s: f64,
}

fn onset_matches(onset: f64, ann: &Annotation, tol_s: f64) -> bool {
    onset >= ann.start_s - tol_s && onset <= ann.end_s + tol_s
}

/// Score an episode set against annotations.
///
/// An episode is valid iff its onset lies inside an attention interval or
/// within `tol_s` of its boundary. All detected episodes count toward the
/// total regardless of label.
pub fn detection_accuracy<F: Float>(
    episodes: &EpisodeSet<F>,
    annotations: &[Annotation],
    tol_s: f64,
) -> Result<DetectionScore> {
    if annotations.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let attention: Vec<&Annotation> = annotations
        .iter()
        .filter(|a| a.label == AnnotationLabel::Attention)
        .collect();
    let n_total = episodes.episodes.len();
    let n_valid = episodes
        .episodes
        .iter()
        .filter(|e| attention.iter().any(|a| onset_matches(e.onset_s, a, tol_s)))
        .count();
    let d_acc = if n_total == 0 {
        0.0
    } else {
        n_valid as f64 / n_total as f64
    };
    Ok(DetectionScore {
        n_valid,
        n_total,
        d_acc,
        n_p: 1.0 - d_acc,
        tolerance_s: tol_s,
    })
}

/// Precision/recall/F1 of an episode set against attention annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is the matched fraction of episodes; recall is the fraction of
/// attention intervals hit by at least one episode onset.
pub fn episode_f1<F: Float>(
    episodes: &EpisodeSet<F>,
    annotations: &[Annotation],
    tol_s: f64,
) -> Result<F1Score> {
    if annotations.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let attention: Vec<&Annotation> = annotations
        .iter()
        .filter(|a| a.label == AnnotationLabel::Attention)
        .collect();
    let n_total = episodes.episodes.len();
    let n_valid = episodes
        .episodes
        .iter()
        .filter(|e| attention.iter().any(|a| onset_matches(e.onset_s, a, tol_s)))
        .count();
    let hit = attention
        .iter()
        .filter(|a| {
            episodes
                .episodes
                .iter()
                .any(|e| onset_matches(e.onset_s, a, tol_s))
        })
        .count();
    let precision = if n_total == 0 {
        0.0
    } else {
        n_valid as f64 / n_total as f64
    };
    let recall = if attention.is_empty() {
        0.0
    } else {
        hit as f64 / attention.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
    })
}
