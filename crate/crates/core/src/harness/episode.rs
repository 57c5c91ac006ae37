//! One closed-loop run: sender, lossy link, receiver, importance learner, feedback.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use crate::detection::{bits_transmitted, evaluate, scene_generate, DetectionOutcome, Detector, FidelityDetector};
use crate::error::{Error, Result};
use crate::frame_grid::{
    assemble, pad_to_grid, read_annotations, read_pgm, tile, BoundingBox, Frame, GridSpec, Patch,
};
use crate::importance::{
    cell_states, motion_features, probability_map, reward, Action, CellState, ProbabilityMap, QModel, RewardInput,
    Transition,
};
use crate::reconstruct::{interpolate, reconstruction_error};
use crate::scheduler::{frame_seed, schedule, select_top, Mask, ScheduleConfig};
use crate::transport::socket::FeedbackPolicy;
use crate::transport::{decode_feedback, decode_packet, encode_feedback, encode_packet, feedback_len, Channel, PACKET_OVERHEAD};

/// Frames padded to the grid, with per-frame target boxes.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub boxes: Vec<Option<BoundingBox>>,
    /// Size before padding; whole-frame metrics cover only this region.
    pub original_width: usize,
    pub original_height: usize,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, boxes: Vec<Option<BoundingBox>>, k: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty frame sequence".into()))?;
        let (w, h) = (first.width, first.height);
        if frames.iter().any(|f| (f.width, f.height) != (w, h)) {
            return Err(Error::InvalidArgument("frames differ in size".into()));
        }
        if boxes.len() != frames.len() {
            return Err(Error::InvalidArgument(format!(
                "{} boxes for {} frames",
                boxes.len(),
                frames.len()
            )));
        }
        let frames = frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut p = pad_to_grid(f, k, 0);
                p.index = i as u32;
                p
            })
            .collect();
        Ok(Sequence {
            frames,
            boxes,
            original_width: w,
            original_height: h,
        })
    }

    pub fn synthetic(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let (frames, boxes) = scene_generate(&cfg.scene_for_seed(seed))?;
        Self::new(frames, boxes.into_iter().map(Some).collect(), cfg.k)
    }

    /// Loads `*.pgm` frames (sorted by file name) and `annotations.csv` from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>, k: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        paths.sort();
        let frames = paths
            .iter()
            .enumerate()
            .map(|(i, p)| read_pgm(p, i as u32))
            .collect::<Result<Vec<_>>>()?;
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("no .pgm frames in {}", dir.display())))?;
        let (w, h) = (first.width, first.height);
        let ann_path = dir.join("annotations.csv");
        let mut boxes = vec![None; frames.len()];
        if ann_path.exists() {
            let by_frame: HashMap<u32, _> = read_annotations(&ann_path)?
                .into_iter()
                .map(|a| (a.frame_index, a))
                .collect();
            for (i, slot) in boxes.iter_mut().enumerate() {
                if let Some(a) = by_frame.get(&(i as u32)) {
                    *slot = a.to_box(w, h).ok();
                }
            }
        }
        Self::new(frames, boxes, k)
    }

    pub fn load(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        match &cfg.dataset {
            Some(dir) => Self::from_dir(dir, cfg.k),
            None => Self::synthetic(cfg, seed),
        }
    }

    pub fn grid(&self, k: usize) -> Result<GridSpec> {
        GridSpec::for_frame(&self.frames[0], k)
    }
}

/// Receiver-side learner: turns each reconstructed frame into a training
/// step and a fresh transmission-probability map.
#[derive(Debug, Clone)]
pub struct ImportanceLearner {
    model: QModel,
    grid: GridSpec,
    previous: Option<Observation>,
    probs: Option<ProbabilityMap>,
    map_changes: Vec<f64>,
    last_loss: Option<f64>,
}

#[derive(Debug, Clone)]
struct Observation {
    frame: Frame,
    received: Mask,
    states: Vec<CellState>,
    rewards: Vec<f64>,
}

impl ImportanceLearner {
    pub fn new(model: QModel, grid: GridSpec) -> Result<Self> {
        if model.k() != grid.k() {
            return Err(Error::InvalidArgument("model and grid disagree on k".into()));
        }
        Ok(ImportanceLearner {
            model,
            grid,
            previous: None,
            probs: None,
            map_changes: Vec::new(),
            last_loss: None,
        })
    }

    pub fn model(&self) -> &QModel {
        &self.model
    }

    pub fn probabilities(&self) -> Option<&ProbabilityMap> {
        self.probs.as_ref()
    }

    /// L2 change of the published map, one entry per frame after the first.
    pub fn map_changes(&self) -> &[f64] {
        &self.map_changes
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn observe(&mut self, frame: &Frame, received: &Mask, target: Option<&BoundingBox>) -> Result<&ProbabilityMap> {
        let k = self.grid.k();
        let motion = match &self.previous {
            Some(prev) => {
                let both: Vec<bool> = (0..k * k).map(|i| received.get(i) && prev.received.get(i)).collect();
                motion_features(frame, &prev.frame, &self.grid, &both)
            }
            None => vec![0.0; k * k],
        };
        let input = RewardInput {
            target_box: target.copied(),
            motion,
        };
        let cfg = self.model.config().clone();
        let states = cell_states(&self.grid, &input, cfg.bins);
        let rewards: Vec<f64> = self.grid.cells().map(|c| reward(c, &input, &self.grid, &cfg)).collect();

        let next_probs = match &self.previous {
            Some(prev) => {
                let batch: Vec<Transition> = (0..k * k)
                    .map(|i| Transition {
                        state: prev.states[i],
                        action: if prev.received.get(i) { Action::Transmit } else { Action::Skip },
                        reward: prev.rewards[i],
                        next: states[i],
                    })
                    .collect();
                let out = self.model.train_step(&batch, &states, self.probs.as_ref())?;
                self.last_loss = Some(out.loss);
                out.probabilities
            }
            None => probability_map(&self.model.weight_map(&states)?)?,
        };
        if let Some(old) = &self.probs {
            self.map_changes.push(next_probs.l2_change(old));
        }
        self.probs = Some(next_probs);
        self.previous = Some(Observation {
            frame: frame.clone(),
            received: received.clone(),
            states,
            rewards,
        });
        Ok(self.probs.as_ref().expect("just set"))
    }
}

/// Feedback policy for the socket receiver, driven by per-frame annotations.
pub struct LearnerPolicy {
    pub learner: ImportanceLearner,
    pub boxes: HashMap<u32, BoundingBox>,
    pub rate: f64,
    pub bootstrap_frames: u32,
}

impl FeedbackPolicy for LearnerPolicy {
    fn on_frame(&mut self, frame: &Frame, received: &Mask) -> Result<Option<Mask>> {
        let target = self.boxes.get(&frame.index).copied();
        let probs = self.learner.observe(frame, received, target.as_ref())?;
        let next = frame.index + 1;
        if next < self.bootstrap_frames {
            return Ok(None);
        }
        Ok(Some(select_top(probs, self.rate, next)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub method: String,
    pub rate: f64,
    pub seed: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub bits_total: u64,
    pub frames: u32,
    pub mean_reconstruction_error: f64,
    /// Mean L2 change of the published probability map between frames (dqn only).
    pub mean_map_change: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub theta: f64,
    pub loss_probability: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub record: MetricsRecord,
    pub final_probabilities: Option<ProbabilityMap>,
    pub model: Option<QModel>,
    pub masks: Vec<Mask>,
    pub outcomes: Vec<DetectionOutcome>,
    /// Last reconstructed frame, for previews.
    pub last_reconstruction: Option<Frame>,
}

const DATA_STREAM: u32 = 0xDA7A;
const FEEDBACK_STREAM: u32 = 0xFEED;

pub fn run_episode(cfg: &ExperimentConfig, method: Method, rate: f64, seed: u64) -> Result<MetricsRecord> {
    let seq = Sequence::load(cfg, seed)?;
    Ok(run_episode_on(&seq, cfg, method, rate, seed, &FidelityDetector { theta: cfg.theta })?.record)
}

// `Instant` panics on wasm32-unknown-unknown, where there is no clock.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Runs the per-frame loop over a prepared sequence.
///
/// Metrics cover post-bootstrap frames only. Errors from any stage abort the
/// episode with the frame index attached.
pub fn run_episode_on(
    seq: &Sequence,
    cfg: &ExperimentConfig,
    method: Method,
    rate: f64,
    seed: u64,
    detector: &dyn Detector,
) -> Result<EpisodeOutput> {
    cfg.validate()?;
    let started = Stopwatch::start();
    let k = cfg.k;
    let grid = seq.grid(k)?;
    let sched = ScheduleConfig {
        rate,
        bootstrap_frames: cfg.bootstrap_frames,
        method: method.selection(),
        seed,
        feedback_period: cfg.feedback_period,
    };
    sched.validate()?;
    let mut data_link = Channel::new(crate::transport::ChannelConfig {
        seed: frame_seed(cfg.channel.seed ^ seed, DATA_STREAM),
        ..cfg.channel.clone()
    })?;
    let mut feedback_link = Channel::new(crate::transport::ChannelConfig {
        seed: frame_seed(cfg.channel.seed ^ seed, FEEDBACK_STREAM),
        ..cfg.channel.clone()
    })?;
    let mut learner = match method.selection() {
        crate::scheduler::SelectionMethod::Dqn => {
            Some(ImportanceLearner::new(QModel::new(k, cfg.importance.clone())?, grid)?)
        }
        crate::scheduler::SelectionMethod::Random => None,
    };
    let region = BoundingBox {
        x: 0,
        y: 0,
        w: seq.original_width,
        h: seq.original_height,
    };

    let mut latest_feedback: Option<Mask> = None;
    let mut previous: Option<Frame> = None;
    let mut masks = Vec::new();
    let mut outcomes = Vec::new();
    let mut error_sum = 0.0;
    let mut feedback_messages = 0u64;
    let mut map_changes_from = 0;

    for (n, frame) in seq.frames.iter().enumerate() {
        let n = n as u32;
        let mut step = || -> Result<Frame> {
            let mask = schedule(n, k, &sched, latest_feedback.as_ref())?;
            let patches = tile(frame, &grid)?;
            let datagrams: Vec<Vec<u8>> = mask.selected().map(|i| encode_packet(&patches[i], &grid)).collect();
            let mut received = Mask::empty(k, n);
            let mut got: Vec<Patch> = Vec::with_capacity(datagrams.len());
            for d in data_link.transmit(datagrams) {
                let Ok((patch, pk)) = decode_packet(&d) else { continue };
                let idx = patch.cell.linear(k);
                if pk != k || patch.frame_index != n || received.get(idx) {
                    continue;
                }
                received.set(idx, true);
                got.push(patch);
            }
            let assembled = assemble(n, &got, &grid, &received, 0)?;
            let recon = if method.interpolates() {
                interpolate(&assembled, &received, previous.as_ref())?
            } else {
                assembled
            };
            if n >= cfg.bootstrap_frames {
                let gt = seq.boxes[n as usize].as_ref();
                outcomes.push(DetectionOutcome {
                    frame_index: n,
                    detected: detector.detect(&recon, frame, gt)?,
                    gt_present: gt.is_some(),
                });
                error_sum += reconstruction_error(&recon, frame, Some(&region))?;
                masks.push(mask);
            }
            if n + 1 == cfg.bootstrap_frames {
                map_changes_from = learner.as_ref().map_or(0, |l| l.map_changes().len());
            }
            if let Some(learner) = learner.as_mut() {
                let probs = learner.observe(&recon, &received, seq.boxes[n as usize].as_ref())?;
                let next = n + 1;
                if next >= cfg.bootstrap_frames && (next - cfg.bootstrap_frames).is_multiple_of(cfg.feedback_period) {
                    let fb = select_top(probs, rate, next)?;
                    let bytes = encode_feedback(&fb);
                    if (next as usize) < seq.frames.len() {
                        feedback_messages += 1;
                    }
                    for d in feedback_link.transmit(vec![bytes]) {
                        if let Ok(m) = decode_feedback(&d) {
                            latest_feedback = Some(m);
                        }
                    }
                }
            }
            Ok(recon)
        };
        let recon = step().map_err(|e| e.context(format!("{method} rate {rate} seed {seed} frame {n}")))?;
        previous = Some(recon);
    }

    let scores = evaluate(&outcomes).map_err(|e| e.context("scene has no post-bootstrap frames"))?;
    let frames = outcomes.len() as u32;
    let bits_total =
        bits_transmitted(&masks, &grid, PACKET_OVERHEAD, None) + feedback_messages * feedback_len(k) as u64 * 8;
    let mean_map_change = learner.as_ref().map_or(0.0, |l| {
        let changes = &l.map_changes()[map_changes_from.min(l.map_changes().len())..];
        if changes.is_empty() {
            0.0
        } else {
            changes.iter().sum::<f64>() / changes.len() as f64
        }
    });
    let record = MetricsRecord {
        method: method.to_string(),
        rate,
        seed,
        f1: scores.f1,
        precision: scores.precision,
        recall: scores.recall,
        bits_total,
        frames,
        mean_reconstruction_error: error_sum / frames as f64,
        mean_map_change,
        gamma: cfg.importance.gamma,
        lambda: cfg.importance.lambda,
        alpha: cfg.importance.alpha,
        theta: cfg.theta,
        loss_probability: cfg.channel.loss_probability,
        wall_time: started.seconds(),
    };
    Ok(EpisodeOutput {
        record,
        final_probabilities: learner.as_ref().and_then(|l| l.probabilities().cloned()),
        model: learner.map(|l| l.model().clone()),
        masks,
        outcomes,
        last_reconstruction: previous,
    })
}
