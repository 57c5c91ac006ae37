//! Receiver-side importance model.
//!
//! A tabular Q function over per-cell states scores every cell of the grid.
//! Each frame, one transition per cell is folded in with a damped Bellman
//! update, the non-negative part of `max_a Q` is normalized into a weight
//! map, and the resulting transmission-probability map is pulled towards the
//! previous frame's map with strength `lambda` before it is published.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_grid::{cell_overlap, write_pgm, BoundingBox, CellId, Frame, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    /// Discount on the next frame's value.
    pub gamma: f64,
    /// Strength of the inter-frame smoothness penalty on the probability map.
    pub lambda: f64,
    /// Learning rate of the tabular update.
    pub alpha: f64,
    pub overlap_weight: f64,
    pub motion_weight: f64,
    /// Bins per state feature.
    pub bins: u8,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            gamma: 0.9,
            lambda: 1.0,
            alpha: 0.1,
            overlap_weight: 1.0,
            motion_weight: 0.5,
            bins: 4,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be >= 1".into()));
        }
        if self.overlap_weight < 0.0 || self.motion_weight < 0.0 {
            return Err(Error::InvalidArgument("reward weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellState {
    pub cell: CellId,
    pub overlap_bin: u8,
    pub motion_bin: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Transmit,
    Skip,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Transmit, Action::Skip];

    fn slot(self) -> usize {
        match self {
            Action::Transmit => 0,
            Action::Skip => 1,
        }
    }
}

/// Maps a feature in `[0, 1]` to one of `bins` equal-width bins.
pub fn discretize(value: f64, bins: u8) -> u8 {
    let b = (value.clamp(0.0, 1.0) * bins as f64).floor() as u8;
    b.min(bins - 1)
}

/// Observations behind one frame's rewards.
#[derive(Debug, Clone)]
pub struct RewardInput {
    pub target_box: Option<BoundingBox>,
    /// Per-cell motion in `[0, 1]`, row-major.
    pub motion: Vec<f64>,
}

pub fn reward(cell: CellId, input: &RewardInput, grid: &GridSpec, cfg: &ImportanceConfig) -> f64 {
    let overlap = input
        .target_box
        .as_ref()
        .map_or(0.0, |b| cell_overlap(cell, grid, b));
    cfg.overlap_weight * overlap + cfg.motion_weight * input.motion[cell.linear(grid.k())]
}

/// Per-cell mean absolute difference to `previous`, scaled to `[0, 1]`.
///
/// Only cells flagged in `observed` carry motion evidence; the rest report 0.
pub fn motion_features(current: &Frame, previous: &Frame, grid: &GridSpec, observed: &[bool]) -> Vec<f64> {
    grid.cells()
        .map(|cell| {
            if !observed[cell.linear(grid.k())] {
                return 0.0;
            }
            let (x0, y0, w, h) = grid.cell_rect(cell);
            let mut sum = 0u64;
            for y in y0..y0 + h {
                let a = &current.row(y)[x0..x0 + w];
                let b = &previous.row(y)[x0..x0 + w];
                sum += a.iter().zip(b).map(|(&p, &q)| p.abs_diff(q) as u64).sum::<u64>();
            }
            sum as f64 / (w * h) as f64 / 255.0
        })
        .collect()
}

/// States of every cell for one frame, from its observations.
pub fn cell_states(grid: &GridSpec, input: &RewardInput, bins: u8) -> Vec<CellState> {
    grid.cells()
        .map(|cell| {
            let overlap = input
                .target_box
                .as_ref()
                .map_or(0.0, |b| cell_overlap(cell, grid, b));
            CellState {
                cell,
                overlap_bin: discretize(overlap, bins),
                motion_bin: discretize(input.motion[cell.linear(grid.k())], bins),
            }
        })
        .collect()
}

/// `r + gamma * q_next`, where `q_next` is the best value at the successor state.
pub fn bellman_target(r: f64, gamma: f64, q_next: f64) -> f64 {
    r + gamma * q_next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: CellState,
    pub action: Action,
    pub reward: f64,
    pub next: CellState,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Bellman MSE (before the update) plus the weighted smoothness term.
    pub loss: f64,
    pub bellman_error: f64,
    pub smoothness: f64,
    /// Published map for the frame just trained on.
    pub probabilities: ProbabilityMap,
}

/// Per-cell normalized importance (non-negative, sums to one).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    k: usize,
    values: Vec<f64>,
    degenerate: bool,
}

impl WeightMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when every cell scored zero and the map fell back to uniform.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// Per-cell transmission probabilities (non-negative, sums to one).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    k: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn uniform(k: usize) -> Self {
        let n = k * k;
        ProbabilityMap {
            k,
            values: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes arbitrary non-negative weights. All-zero input gives the uniform map.
    pub fn from_weights(k: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != k * k {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a {k}x{k} grid",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("weight {w} is not a finite non-negative value")));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Ok(Self::uniform(k));
        }
        Ok(ProbabilityMap {
            k,
            values: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Squared L2 distance to `other`.
    pub fn squared_change(&self, other: &ProbabilityMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn l2_change(&self, other: &ProbabilityMap) -> f64 {
        self.squared_change(other).sqrt()
    }

    /// Minimizer of `|P - self|² + lambda·|P - previous|²`.
    pub fn smoothed_towards(&self, previous: &ProbabilityMap, lambda: f64) -> ProbabilityMap {
        let values = self
            .values
            .iter()
            .zip(&previous.values)
            .map(|(raw, prev)| (raw + lambda * prev) / (1.0 + lambda))
            .collect();
        ProbabilityMap { k: self.k, values }
    }
}

/// Normalizes a weight map into transmission probabilities.
pub fn probability_map(weights: &WeightMap) -> Result<ProbabilityMap> {
    ProbabilityMap::from_weights(weights.k, &weights.values)
}

/// Renders a k×k heatmap, brightest cell at 255.
pub fn heatmap_frame(map: &ProbabilityMap) -> Frame {
    let max = map.values.iter().cloned().fold(0.0, f64::max);
    let pixels = map
        .values
        .iter()
        .map(|p| if max > 0.0 { (255.0 * p / max).round() as u8 } else { 0 })
        .collect();
    Frame {
        index: 0,
        width: map.k,
        height: map.k,
        pixels,
    }
}

pub fn export_heatmap(map: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(&heatmap_frame(map), path)
}

/// Tabular action-value function over `CellState × Action`.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    k: usize,
    cfg: ImportanceConfig,
    table: Vec<f64>,
}

const CHECKPOINT_MAGIC: &str = "patchcast-qmodel";
const CHECKPOINT_VERSION: u32 = 1;

impl QModel {
    pub fn new(k: usize, cfg: ImportanceConfig) -> Result<Self> {
        cfg.validate()?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let b = cfg.bins as usize;
        Ok(QModel {
            k,
            table: vec![0.0; k * k * b * b * Action::ALL.len()],
            cfg,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn config(&self) -> &ImportanceConfig {
        &self.cfg
    }

    /// Number of distinct cell states.
    pub fn state_count(&self) -> usize {
        let b = self.cfg.bins as usize;
        self.k * self.k * b * b
    }

    fn slot(&self, s: &CellState, a: Action) -> usize {
        let b = self.cfg.bins as usize;
        debug_assert!(s.cell.row < self.k && s.cell.col < self.k);
        debug_assert!((s.overlap_bin as usize) < b && (s.motion_bin as usize) < b);
        let state = (s.cell.linear(self.k) * b + s.overlap_bin as usize) * b + s.motion_bin as usize;
        state * Action::ALL.len() + a.slot()
    }

    fn check_state(&self, s: &CellState) -> Result<()> {
        let b = self.cfg.bins;
        if s.cell.row >= self.k || s.cell.col >= self.k || s.overlap_bin >= b || s.motion_bin >= b {
            return Err(Error::InvalidArgument(format!("state {s:?} outside the model's state space")));
        }
        Ok(())
    }

    pub fn q(&self, s: &CellState, a: Action) -> f64 {
        self.table[self.slot(s, a)]
    }

    pub fn set_q(&mut self, s: &CellState, a: Action, value: f64) -> Result<()> {
        self.check_state(s)?;
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("Q value {value} is not finite")));
        }
        let i = self.slot(s, a);
        self.table[i] = value;
        Ok(())
    }

    pub fn max_q(&self, s: &CellState) -> f64 {
        Action::ALL
            .iter()
            .map(|&a| self.q(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// One damped Bellman update over `batch`, followed by publishing the
    /// probability map for `states_now`.
    ///
    /// The returned loss is the Bellman MSE measured before the update plus
    /// `lambda` times the squared change of the published map against
    /// `previous` (zero when there is no previous map).
    pub fn train_step(
        &mut self,
        batch: &[Transition],
        states_now: &[CellState],
        previous: Option<&ProbabilityMap>,
    ) -> Result<TrainOutcome> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        for t in batch {
            self.check_state(&t.state)?;
            self.check_state(&t.next)?;
            if !t.reward.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite reward {}", t.reward)));
            }
        }
        let targets: Vec<f64> = batch
            .iter()
            .map(|t| bellman_target(t.reward, self.cfg.gamma, self.max_q(&t.next)))
            .collect();
        let bellman_error = batch
            .iter()
            .zip(&targets)
            .map(|(t, target)| {
                let d = self.q(&t.state, t.action) - target;
                d * d
            })
            .sum::<f64>()
            / batch.len() as f64;

        let alpha = self.cfg.alpha;
        for (t, target) in batch.iter().zip(&targets) {
            let i = self.slot(&t.state, t.action);
            self.table[i] += alpha * (target - self.table[i]);
        }

        let raw = probability_map(&self.weight_map(states_now)?)?;
        let (probabilities, smoothness) = match previous {
            Some(prev) => {
                let p = raw.smoothed_towards(prev, self.cfg.lambda);
                let change = p.squared_change(prev);
                (p, change)
            }
            None => (raw, 0.0),
        };
        Ok(TrainOutcome {
            loss: bellman_error + self.cfg.lambda * smoothness,
            bellman_error,
            smoothness,
            probabilities,
        })
    }

    /// Normalized non-negative `max_a Q` over the given per-cell states.
    pub fn weight_map(&self, states: &[CellState]) -> Result<WeightMap> {
        if states.len() != self.k * self.k {
            return Err(Error::InvalidArgument(format!(
                "{} states for a {k}x{k} grid",
                states.len(),
                k = self.k
            )));
        }
        let mut values = Vec::with_capacity(states.len());
        for s in states {
            self.check_state(s)?;
            values.push(self.max_q(s).max(0.0));
        }
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            values.iter_mut().for_each(|v| *v /= total);
            return Ok(WeightMap {
                k: self.k,
                values,
                degenerate: false,
            });
        }
        log::debug!("all cell values are zero, falling back to a uniform weight map");
        let n = states.len();
        Ok(WeightMap {
            k: self.k,
            values: vec![1.0 / n as f64; n],
            degenerate: true,
        })
    }

    /// Text checkpoint: header lines followed by one `q` line per non-zero entry.
    pub fn to_checkpoint(&self) -> String {
        let c = &self.cfg;
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "k {}", self.k).unwrap();
        writeln!(out, "bins {}", c.bins).unwrap();
        writeln!(out, "gamma {}", c.gamma).unwrap();
        writeln!(out, "lambda {}", c.lambda).unwrap();
        writeln!(out, "alpha {}", c.alpha).unwrap();
        writeln!(out, "overlap_weight {}", c.overlap_weight).unwrap();
        writeln!(out, "motion_weight {}", c.motion_weight).unwrap();
        let b = c.bins as usize;
        for (i, &v) in self.table.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let action = if i % 2 == 0 { "transmit" } else { "skip" };
            let state = i / 2;
            let motion = state % b;
            let overlap = (state / b) % b;
            let cell = state / (b * b);
            writeln!(out, "q {cell} {overlap} {motion} {action} {v}").unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("checkpoint: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        match header.split_whitespace().collect::<Vec<_>>()[..] {
            [CHECKPOINT_MAGIC, v] if v == CHECKPOINT_VERSION.to_string() => {}
            [CHECKPOINT_MAGIC, v] => return Err(bad(format!("unsupported version {v}"))),
            _ => return Err(bad("missing header".into())),
        }
        let mut k = None;
        let mut cfg = ImportanceConfig::default();
        let mut entries = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number in `{line}`")));
            match parts[..] {
                ["k", v] => k = Some(v.parse::<usize>().map_err(|_| bad(format!("bad k `{v}`")))?),
                ["bins", v] => cfg.bins = v.parse().map_err(|_| bad(format!("bad bins `{v}`")))?,
                ["gamma", v] => cfg.gamma = num(v)?,
                ["lambda", v] => cfg.lambda = num(v)?,
                ["alpha", v] => cfg.alpha = num(v)?,
                ["overlap_weight", v] => cfg.overlap_weight = num(v)?,
                ["motion_weight", v] => cfg.motion_weight = num(v)?,
                ["q", cell, overlap, motion, action, value] => {
                    let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad index in `{line}`")));
                    let action = match action {
                        "transmit" => Action::Transmit,
                        "skip" => Action::Skip,
                        other => return Err(bad(format!("unknown action `{other}`"))),
                    };
                    entries.push((idx(cell)?, idx(overlap)?, idx(motion)?, action, num(value)?));
                }
                _ => return Err(bad(format!("unrecognized line `{line}`"))),
            }
        }
        let k = k.ok_or_else(|| bad("missing k".into()))?;
        let mut model = QModel::new(k, cfg)?;
        for (cell, overlap, motion, action, value) in entries {
            if cell >= k * k || overlap > u8::MAX as usize || motion > u8::MAX as usize {
                return Err(bad(format!("entry for cell {cell} out of range")));
            }
            let state = CellState {
                cell: CellId::from_linear(cell, k),
                overlap_bin: overlap as u8,
                motion_bin: motion as u8,
            };
            model.set_q(&state, action, value)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(k: usize, linear: usize, overlap_bin: u8, motion_bin: u8) -> CellState {
        CellState {
            cell: CellId::from_linear(linear, k),
            overlap_bin,
            motion_bin,
        }
    }

    #[test]
    fn reward_examples() {
        let grid = GridSpec::new(8, 64, 64).unwrap();
        let cfg = ImportanceConfig::default();
        let cell = CellId::new(1, 1);
        let mut motion = vec![0.0; 64];
        let inside = RewardInput {
            target_box: Some(BoundingBox::clipped(4, 4, 20, 20, 64, 64).unwrap()),
            motion: motion.clone(),
        };
        assert_eq!(reward(cell, &inside, &grid, &cfg), 1.0);

        motion[9] = 1.0;
        let moving = RewardInput {
            target_box: Some(BoundingBox::clipped(40, 40, 8, 8, 64, 64).unwrap()),
            motion: motion.clone(),
        };
        assert_eq!(reward(cell, &moving, &grid, &cfg), 0.5);

        motion[9] = 0.4;
        let half = RewardInput {
            target_box: Some(BoundingBox::clipped(8, 8, 4, 8, 64, 64).unwrap()),
            motion,
        };
        // 1.0 * 0.5 + 0.5 * 0.4
        assert!((reward(cell, &half, &grid, &cfg) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn bellman_examples() {
        assert!((bellman_target(1.0, 0.9, 2.0) - 2.8).abs() < 1e-12);
        assert_eq!(bellman_target(1.5, 0.0, 100.0), 1.5);
    }

    #[test]
    fn discretize_edges() {
        assert_eq!(discretize(0.0, 4), 0);
        assert_eq!(discretize(0.2499, 4), 0);
        assert_eq!(discretize(0.25, 4), 1);
        assert_eq!(discretize(1.0, 4), 3);
        assert_eq!(discretize(7.0, 4), 3);
    }

    #[test]
    fn motion_only_where_observed() {
        let grid = GridSpec::new(2, 4, 4).unwrap();
        let a = Frame::filled(0, 4, 4, 255);
        let b = Frame::filled(0, 4, 4, 0);
        let m = motion_features(&a, &b, &grid, &[true, false, true, false]);
        assert_eq!(m, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn loss_zero_at_fixed_point() {
        let cfg = ImportanceConfig {
            gamma: 0.5,
            ..Default::default()
        };
        let mut model = QModel::new(2, cfg).unwrap();
        // self-loop with r = 1: Q* = 1 / (1 - 0.5) = 2 for both actions
        let s = state(2, 0, 1, 0);
        model.set_q(&s, Action::Transmit, 2.0).unwrap();
        model.set_q(&s, Action::Skip, 2.0).unwrap();
        let batch = [Transition {
            state: s,
            action: Action::Transmit,
            reward: 1.0,
            next: s,
        }];
        let states: Vec<CellState> = (0..4).map(|i| if i == 0 { s } else { state(2, i, 0, 0) }).collect();
        let prev = probability_map(&model.weight_map(&states).unwrap()).unwrap();
        let out = model.train_step(&batch, &states, Some(&prev)).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.probabilities, prev);
    }

    #[test]
    fn loss_single_transition() {
        let cfg = ImportanceConfig {
            lambda: 0.0,
            gamma: 0.9,
            ..Default::default()
        };
        let mut model = QModel::new(2, cfg).unwrap();
        let s = state(2, 1, 0, 0);
        let batch = [Transition {
            state: s,
            action: Action::Skip,
            reward: 2.0,
            next: state(2, 2, 0, 0),
        }];
        let states: Vec<CellState> = (0..4).map(|i| state(2, i, 0, 0)).collect();
        let out = model.train_step(&batch, &states, None).unwrap();
        assert_eq!(out.loss, 4.0);
        assert!((model.q(&s, Action::Skip) - 0.2).abs() < 1e-12);
        assert!(model.train_step(&[], &states, None).is_err());
    }

    /// Brute-force Q value iteration on an explicit deterministic MDP.
    fn value_iteration(next: &[[usize; 2]], rewards: &[[f64; 2]], gamma: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; next.len()];
        for _ in 0..10_000 {
            let mut fresh = q.clone();
            for s in 0..next.len() {
                for a in 0..2 {
                    let succ = next[s][a];
                    fresh[s][a] = rewards[s][a] + gamma * q[succ][0].max(q[succ][1]);
                }
            }
            q = fresh;
        }
        q
    }

    #[test]
    fn tabular_sweeps_match_value_iteration() {
        // 3-state chain: transmit moves right, skip stays; the right end pays.
        let next = [[1, 0], [2, 1], [2, 2]];
        let rewards = [[0.0, 0.1], [0.2, 0.0], [1.0, 0.5]];
        let gamma = 0.9;
        let oracle = value_iteration(&next, &rewards, gamma);

        let cfg = ImportanceConfig {
            gamma,
            alpha: 0.5,
            ..Default::default()
        };
        let mut model = QModel::new(2, cfg).unwrap();
        let st = |i: usize| state(2, i, 0, 0);
        let actions = Action::ALL;
        let batch: Vec<Transition> = (0..3)
            .flat_map(|s| {
                (0..2).map(move |a| Transition {
                    state: st(s),
                    action: actions[a],
                    reward: rewards[s][a],
                    next: st(next[s][a]),
                })
            })
            .collect();
        let states: Vec<CellState> = (0..4).map(st).collect();
        for _ in 0..2000 {
            model.train_step(&batch, &states, None).unwrap();
        }
        for s in 0..3 {
            for a in 0..2 {
                let got = model.q(&st(s), actions[a]);
                assert!((got - oracle[s][a]).abs() < 1e-6, "Q({s},{a}) = {got}, oracle {}", oracle[s][a]);
            }
        }
    }

    #[test]
    fn weight_map_examples() {
        let mut model = QModel::new(2, ImportanceConfig::default()).unwrap();
        let states: Vec<CellState> = (0..4).map(|i| state(2, i, 0, 0)).collect();
        let w = model.weight_map(&states).unwrap();
        assert!(w.is_degenerate());
        assert_eq!(w.values(), &[0.25; 4]);

        model.set_q(&states[1], Action::Transmit, 1.0).unwrap();
        model.set_q(&states[2], Action::Skip, 3.0).unwrap();
        model.set_q(&states[3], Action::Skip, -5.0).unwrap();
        let w = model.weight_map(&states).unwrap();
        assert_eq!(w.values(), &[0.0, 0.25, 0.75, 0.0]);

        for s in &states {
            for a in Action::ALL {
                model.set_q(s, a, 2.0).unwrap();
            }
        }
        assert_eq!(model.weight_map(&states).unwrap().values(), &[0.25; 4]);
    }

    #[test]
    fn weight_argmax_matches_q_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut model = QModel::new(8, ImportanceConfig::default()).unwrap();
            let states: Vec<CellState> = (0..64).map(|i| state(8, i, rng.random_range(0..4), 0)).collect();
            for s in &states {
                model.set_q(s, Action::Transmit, rng.random_range(0.0..10.0)).unwrap();
            }
            let qt: Vec<f64> = states.iter().map(|s| model.max_q(s)).collect();
            let w = model.weight_map(&states).unwrap();
            let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            assert_eq!(argmax(w.values()), argmax(&qt));
        }
    }

    #[test]
    fn probability_map_examples() {
        let p = ProbabilityMap::from_weights(1, &[3.0]).unwrap();
        assert_eq!(p.values(), &[1.0]);
        let w = ProbabilityMap::from_weights(2, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let again = ProbabilityMap::from_weights(2, w.values()).unwrap();
        for (a, b) in w.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = ProbabilityMap::from_weights(2, &[2.0, 6.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.values(), &[0.25, 0.75, 0.0, 0.0]);
        assert!(ProbabilityMap::from_weights(2, &[1.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn heatmap_examples() {
        let uniform = heatmap_frame(&ProbabilityMap::uniform(8));
        assert!(uniform.pixels.iter().all(|&p| p == 255));
        let mut v = vec![0.0; 64];
        v[10] = 1.0;
        let hot = heatmap_frame(&ProbabilityMap::from_weights(8, &v).unwrap());
        assert_eq!(hot.pixels.iter().filter(|&&p| p == 255).count(), 1);
        assert_eq!(hot.pixels[10], 255);
        assert_eq!(hot.pixels.iter().filter(|&&p| p == 0).count(), 63);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        export_heatmap(&ProbabilityMap::uniform(8), &path).unwrap();
        let back = crate::frame_grid::read_pgm(&path, 0).unwrap();
        assert_eq!((back.width, back.height), (8, 8));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = QModel::new(
            4,
            ImportanceConfig {
                gamma: 0.8,
                lambda: 2.5,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let s = state(4, rng.random_range(0..16), rng.random_range(0..4), rng.random_range(0..4));
            let a = Action::ALL[rng.random_range(0..2)];
            model.set_q(&s, a, rng.random_range(-3.0..3.0)).unwrap();
        }
        let text = model.to_checkpoint();
        assert_eq!(QModel::from_checkpoint(&text).unwrap(), model);
        assert!(QModel::from_checkpoint("patchcast-qmodel 9\nk 4\n").is_err());
        assert!(QModel::from_checkpoint("junk").is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ImportanceConfig { gamma: 1.0, ..Default::default() },
            ImportanceConfig { alpha: 0.0, ..Default::default() },
            ImportanceConfig { lambda: -1.0, ..Default::default() },
            ImportanceConfig { bins: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(QModel::new(8, cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn maps_are_distributions(values in prop::collection::vec(-5.0f64..20.0, 64), scale in 0.001f64..1000.0) {
            let mut model = QModel::new(8, ImportanceConfig::default()).unwrap();
            let states: Vec<CellState> = (0..64).map(|i| state(8, i, 0, 0)).collect();
            for (s, v) in states.iter().zip(&values) {
                model.set_q(s, Action::Transmit, *v).unwrap();
            }
            let w = model.weight_map(&states).unwrap();
            let p = probability_map(&w).unwrap();
            for map in [w.values(), p.values()] {
                prop_assert!((map.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(map.iter().all(|&x| x >= 0.0));
            }
            for (s, v) in states.iter().zip(&values) {
                model.set_q(s, Action::Transmit, v * scale).unwrap();
            }
            let scaled = model.weight_map(&states).unwrap();
            for (a, b) in w.values().iter().zip(scaled.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn smoothing_keeps_distribution(
            a in prop::collection::vec(0.0f64..1.0, 16),
            b in prop::collection::vec(0.0f64..1.0, 16),
            lambda in 0.0f64..50.0,
        ) {
            prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
            let pa = ProbabilityMap::from_weights(4, &a).unwrap();
            let pb = ProbabilityMap::from_weights(4, &b).unwrap();
            let s = pa.smoothed_towards(&pb, lambda);
            prop_assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.l2_change(&pb) <= pa.l2_change(&pb) + 1e-12);
        }

        #[test]
        fn loss_non_negative(q in -5.0f64..5.0, r in 0.0f64..1.5, lambda in 0.0f64..10.0) {
            let mut model = QModel::new(2, ImportanceConfig { lambda, ..Default::default() }).unwrap();
            let s = state(2, 0, 0, 0);
            model.set_q(&s, Action::Transmit, q).unwrap();
            let batch = [Transition { state: s, action: Action::Transmit, reward: r, next: state(2, 1, 0, 0) }];
            let states: Vec<CellState> = (0..4).map(|i| state(2, i, 0, 0)).collect();
            let out = model.train_step(&batch, &states, Some(&ProbabilityMap::from_weights(2, &[1.0, 0.0, 0.0, 0.0]).unwrap())).unwrap();
            prop_assert!(out.loss >= 0.0);
        }
    }
}
