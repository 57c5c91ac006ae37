use crate::error::{Error, Result};
use crate::frame_grid::{BoundingBox, Frame, GridSpec};
use crate::reconstruct::reconstruction_error;
use crate::scheduler::Mask;
use crate::transport::feedback_len;

pub const DEFAULT_THETA: f64 = 0.8;

/// Anything that decides whether the target is visible in a reconstructed frame.
///
/// `original` and `gt` are available for reference-based proxies; a real
/// detector would only look at `reconstructed`.
pub trait Detector: Send + Sync {
    fn detect(&self, reconstructed: &Frame, original: &Frame, gt: Option<&BoundingBox>) -> Result<bool>;
}

/// Counts the target as detected when its box is reconstructed with
/// fidelity `1 - error >= theta`.
#[derive(Debug, Clone, Copy)]
pub struct FidelityDetector {
    pub theta: f64,
}

impl Default for FidelityDetector {
    fn default() -> Self {
        FidelityDetector { theta: DEFAULT_THETA }
    }
}

impl Detector for FidelityDetector {
    fn detect(&self, reconstructed: &Frame, original: &Frame, gt: Option<&BoundingBox>) -> Result<bool> {
        match gt {
            Some(b) => detect(reconstructed, original, b, self.theta),
            None => Ok(false),
        }
    }
}

pub fn detect(reconstructed: &Frame, original: &Frame, gt: &BoundingBox, theta: f64) -> Result<bool> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside (0, 1]")));
    }
    let err = reconstruction_error(reconstructed, original, Some(gt))?;
    Ok(1.0 - err >= theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionOutcome {
    pub frame_index: u32,
    pub detected: bool,
    pub gt_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Frame-level scoring: a detection on a frame with a target is a true
/// positive, a miss is a false negative, and a detection on a frame without
/// a target is a false positive.
pub fn evaluate(outcomes: &[DetectionOutcome]) -> Result<Scores> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no detection outcomes to score".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for o in outcomes {
        match (o.gt_present, o.detected) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Scores { f1, precision, recall })
}

/// Bits on the wire for the given per-frame masks: one datagram of
/// `header_bytes + patch bytes` per selected cell, plus one feedback message
/// every `feedback_period` frames when feedback is in use.
pub fn bits_transmitted(masks: &[Mask], grid: &GridSpec, header_bytes: usize, feedback_period: Option<u32>) -> u64 {
    let per_patch = (header_bytes + grid.patch_len()) as u64 * 8;
    let patches: u64 = masks.iter().map(|m| m.popcount() as u64).sum();
    let feedback = match feedback_period {
        Some(p) if p > 0 => masks.len().div_ceil(p as usize) as u64 * feedback_len(grid.k()) as u64 * 8,
        _ => 0,
    };
    patches * per_patch + feedback
}
