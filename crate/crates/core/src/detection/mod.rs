//! Synthetic scenes with ground truth, the detector interface, and scoring.

mod metrics;
mod scene;

pub use metrics::{
    bits_transmitted, detect, evaluate, DetectionOutcome, Detector, FidelityDetector, Scores, DEFAULT_THETA,
};
pub use scene::{scene_generate, SceneConfig};
