use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_grid::{BoundingBox, Frame};

/// A textured rectangle moving over a static textured background.
///
/// The target bounces off the frame edges, so it stays fully visible for
/// the whole sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frame_count: u32,
    pub object_w: usize,
    pub object_h: usize,
    /// Pixels per frame.
    pub velocity: (i64, i64),
    /// Uniform per-frame position jitter in `[-jitter, jitter]` on each axis.
    pub jitter: u32,
    /// Top-left corner at frame 0; drawn from `object_seed` when absent.
    pub start: Option<(i64, i64)>,
    pub background_seed: u64,
    pub object_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            frame_count: 200,
            object_w: 12,
            object_h: 12,
            velocity: (1, 1),
            jitter: 0,
            start: None,
            background_seed: 1,
            object_seed: 2,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, min_frames: u32) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("scene dimensions must be positive".into()));
        }
        if self.object_w == 0 || self.object_h == 0 || self.object_w > self.width || self.object_h > self.height {
            return Err(Error::InvalidArgument(format!(
                "{}x{} object does not fit a {}x{} frame",
                self.object_w, self.object_h, self.width, self.height
            )));
        }
        if self.frame_count < min_frames.max(1) {
            return Err(Error::InvalidArgument(format!(
                "scene has {} frames, need at least {}",
                self.frame_count, min_frames
            )));
        }
        Ok(())
    }
}

/// Folds an unbounded coordinate into `[0, span]` by reflecting at both ends.
fn bounce(p: i64, span: i64) -> i64 {
    if span == 0 {
        return 0;
    }
    let m = p.rem_euclid(2 * span);
    if m > span {
        2 * span - m
    } else {
        m
    }
}

fn background(cfg: &SceneConfig) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.background_seed);
    // a few low-frequency waves plus per-pixel grain, kept within [40, 110]
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut px = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let wave: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum::<f64>()
                / 3.0;
            let grain: f64 = rng.random_range(-8.0..8.0);
            px.push((75.0 + 25.0 * wave + grain).clamp(40.0, 110.0) as u8);
        }
    }
    px
}

fn object_texture(cfg: &SceneConfig) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.object_seed ^ 0x5EED_0B1E);
    (0..cfg.object_w * cfg.object_h)
        .map(|i| {
            let (x, y) = (i % cfg.object_w, i / cfg.object_w);
            let stripe = if (x / 3 + y / 3) % 2 == 0 { 20 } else { 0 };
            rng.random_range(180..=225) + stripe
        })
        .collect()
}

/// Renders the sequence and its per-frame target boxes.
pub fn scene_generate(cfg: &SceneConfig) -> Result<(Vec<Frame>, Vec<BoundingBox>)> {
    cfg.validate(1)?;
    let bg = background(cfg);
    let tex = object_texture(cfg);
    let span_x = (cfg.width - cfg.object_w) as i64;
    let span_y = (cfg.height - cfg.object_h) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.object_seed);
    let (sx, sy) = cfg
        .start
        .unwrap_or_else(|| (rng.random_range(0..=span_x), rng.random_range(0..=span_y)));
    let j = cfg.jitter as i64;

    let mut frames = Vec::with_capacity(cfg.frame_count as usize);
    let mut boxes = Vec::with_capacity(cfg.frame_count as usize);
    for t in 0..cfg.frame_count as i64 {
        let (jx, jy) = if j > 0 {
            (rng.random_range(-j..=j), rng.random_range(-j..=j))
        } else {
            (0, 0)
        };
        let x = bounce(sx + cfg.velocity.0 * t + jx, span_x) as usize;
        let y = bounce(sy + cfg.velocity.1 * t + jy, span_y) as usize;
        let mut px = bg.clone();
        for oy in 0..cfg.object_h {
            let row = (y + oy) * cfg.width + x;
            px[row..row + cfg.object_w].copy_from_slice(&tex[oy * cfg.object_w..(oy + 1) * cfg.object_w]);
        }
        frames.push(Frame::new(t as u32, cfg.width, cfg.height, px)?);
        boxes.push(BoundingBox {
            x,
            y,
            w: cfg.object_w,
            h: cfg.object_h,
        });
    }
    Ok((frames, boxes))
}
