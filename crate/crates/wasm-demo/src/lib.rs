//! wasm-bindgen bindings behind `www/index.html`.
//!
//! Each exported function is a thin wrapper around a plain Rust function so the
//! logic can be tested natively.

use patchcast::detection::FidelityDetector;
use patchcast::harness::{run_episode_on, EpisodeOutput, ExperimentConfig, Method, Sequence};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Knobs exposed by the page's sliders.
#[derive(Debug, Clone, Copy)]
pub struct Knobs {
    pub rate: f64,
    pub seed: u32,
    pub lambda: f64,
    pub loss: f64,
    pub frames: u32,
}

impl Knobs {
    fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.frame_count = self.frames;
        cfg.importance.lambda = self.lambda;
        cfg.channel.loss_probability = self.loss;
        cfg
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub method: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub bits_total: u64,
    pub frames: u32,
    pub mean_reconstruction_error: f64,
    pub mean_map_change: f64,
}

/// Result of one simulated episode, shaped for canvas drawing.
#[wasm_bindgen]
#[derive(Debug)]
pub struct EpisodeView {
    summary: String,
    heatmap: Vec<f64>,
    k: usize,
    width: usize,
    height: usize,
    original: Vec<u8>,
    reconstruction: Vec<u8>,
    mask: Vec<u8>,
}

#[wasm_bindgen]
impl EpisodeView {
    /// Metrics as a JSON object.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    /// Final transmission probabilities, row-major k×k. Empty for random methods.
    pub fn heatmap(&self) -> Vec<f64> {
        self.heatmap.clone()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Last source frame, 8-bit grayscale.
    pub fn original(&self) -> Vec<u8> {
        self.original.clone()
    }

    /// Receiver's reconstruction of the last frame.
    pub fn reconstruction(&self) -> Vec<u8> {
        self.reconstruction.clone()
    }

    /// Cells sent for the last frame, one byte (0 or 1) per cell.
    pub fn mask(&self) -> Vec<u8> {
        self.mask.clone()
    }
}

pub fn simulate(method: &str, knobs: Knobs) -> Result<EpisodeView, String> {
    let method: Method = method.parse().map_err(|e: patchcast::Error| e.to_string())?;
    let cfg = knobs.config();
    let seq = Sequence::load(&cfg, knobs.seed as u64).map_err(|e| e.to_string())?;
    let out: EpisodeOutput = run_episode_on(
        &seq,
        &cfg,
        method,
        knobs.rate,
        knobs.seed as u64,
        &FidelityDetector { theta: cfg.theta },
    )
    .map_err(|e| e.to_string())?;

    let r = &out.record;
    let summary = Summary {
        method: r.method.clone(),
        f1: r.f1,
        precision: r.precision,
        recall: r.recall,
        bits_total: r.bits_total,
        frames: r.frames,
        mean_reconstruction_error: r.mean_reconstruction_error,
        mean_map_change: r.mean_map_change,
    };
    let last = seq.frames.last().ok_or("empty sequence")?;
    let recon = out.last_reconstruction.as_ref().ok_or("no frames reconstructed")?;
    let mask = out.masks.last().ok_or("no masks")?;
    Ok(EpisodeView {
        summary: serde_json::to_string(&summary).map_err(|e| e.to_string())?,
        heatmap: out.final_probabilities.map(|p| p.values().to_vec()).unwrap_or_default(),
        k: cfg.k,
        width: last.width,
        height: last.height,
        original: last.pixels.clone(),
        reconstruction: recon.pixels.clone(),
        mask: mask.bits().iter().map(|&b| b as u8).collect(),
    })
}

/// One frame of the synthetic scene, for scrubbing through the input.
pub fn scene_pixels(seed: u32, index: u32) -> Result<Vec<u8>, String> {
    let knobs = Knobs {
        rate: 1.0,
        seed,
        lambda: 0.0,
        loss: 0.0,
        frames: index + 1,
    };
    let seq = Sequence::load(&knobs.config(), seed as u64).map_err(|e| e.to_string())?;
    Ok(seq.frames[index as usize].pixels.clone())
}

/// Runs one episode of `method` ("random", "random+interp", "dqn", "dqn+interp").
#[wasm_bindgen(js_name = runEpisode)]
pub fn run_episode(method: &str, rate: f64, seed: u32, lambda: f64, loss: f64, frames: u32) -> Result<EpisodeView, JsError> {
    simulate(
        method,
        Knobs {
            rate,
            seed,
            lambda,
            loss,
            frames,
        },
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sceneFrame)]
pub fn scene_frame(seed: u32, index: u32) -> Result<Vec<u8>, JsError> {
    scene_pixels(seed, index).map_err(|e| JsError::new(&e))
}
