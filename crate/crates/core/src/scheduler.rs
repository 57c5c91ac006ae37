//! Sender-side patch selection: bootstrap, top-probability masks and the random baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ProbabilityMap;

/// Per-cell transmit decisions for one frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    k: usize,
    frame_index: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(k: usize, frame_index: u32) -> Self {
        Mask {
            k,
            frame_index,
            bits: vec![true; k * k],
        }
    }

    pub fn empty(k: usize, frame_index: u32) -> Self {
        Mask {
            k,
            frame_index,
            bits: vec![false; k * k],
        }
    }

    pub fn from_bits(k: usize, frame_index: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != k * k {
            return Err(Error::InvalidArgument(format!(
                "mask for k={k} needs {} bits, got {}",
                k * k,
                bits.len()
            )));
        }
        Ok(Mask {
            k,
            frame_index,
            bits,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn with_frame_index(mut self, frame_index: u32) -> Self {
        self.frame_index = frame_index;
        self
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Linear indices of the set cells, ascending.
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Random,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub rate: f64,
    pub bootstrap_frames: u32,
    pub method: SelectionMethod,
    pub seed: u64,
    /// Frames one feedback mask stays valid for.
    pub feedback_period: u32,
}

impl ScheduleConfig {
    pub fn new(rate: f64, method: SelectionMethod, seed: u64) -> Self {
        ScheduleConfig {
            rate,
            bootstrap_frames: 4,
            method,
            seed,
            feedback_period: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.rate)?;
        if self.bootstrap_frames < 1 {
            return Err(Error::InvalidArgument("bootstrap_frames must be >= 1".into()));
        }
        if self.feedback_period < 1 {
            return Err(Error::InvalidArgument("feedback_period must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if rate.is_nan() || rate <= 0.0 || rate > 1.0 {
        return Err(Error::InvalidArgument(format!("rate {rate} outside (0, 1]")));
    }
    Ok(())
}

/// Number of cells sent per frame at `rate`: ⌈rate·k²⌉, at least one.
pub fn budget(rate: f64, k: usize) -> Result<usize> {
    check_rate(rate)?;
    let cells = k * k;
    // 1e-9 absorbs products like 0.07 * 100 = 7.000000000000001
    let n = (rate * cells as f64 - 1e-9).ceil() as usize;
    Ok(n.clamp(1, cells))
}

/// Highest-probability cells; ties go to the lower linear index.
pub fn select_top(probs: &ProbabilityMap, rate: f64, frame_index: u32) -> Result<Mask> {
    let k = probs.k();
    let n = budget(rate, k)?;
    let values = probs.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = Mask::empty(k, frame_index);
    for &i in &order[..n] {
        mask.set(i, true);
    }
    Ok(mask)
}

/// Uniform draw of `budget(rate, k)` distinct cells.
pub fn random_mask(rate: f64, k: usize, seed: u64) -> Result<Mask> {
    let n = budget(rate, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::empty(k, 0);
    for i in rand::seq::index::sample(&mut rng, k * k, n) {
        mask.set(i, true);
    }
    Ok(mask)
}

/// Derives a per-frame seed so each frame's random draw is independent but reproducible.
pub fn frame_seed(seed: u64, frame_index: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mask the sender applies to `frame_index`.
///
/// Bootstrap frames are always sent whole. The dqn method applies the most
/// recent feedback while it is still inside its validity window and falls
/// back to the full frame otherwise.
pub fn schedule(
    frame_index: u32,
    k: usize,
    cfg: &ScheduleConfig,
    latest_feedback: Option<&Mask>,
) -> Result<Mask> {
    cfg.validate()?;
    if frame_index < cfg.bootstrap_frames {
        return Ok(Mask::full(k, frame_index));
    }
    match cfg.method {
        SelectionMethod::Random => {
            Ok(random_mask(cfg.rate, k, frame_seed(cfg.seed, frame_index))?.with_frame_index(frame_index))
        }
        SelectionMethod::Dqn => match latest_feedback {
            Some(fb)
                if fb.k() == k
                    && frame_index >= fb.frame_index()
                    && frame_index - fb.frame_index() < cfg.feedback_period =>
            {
                Ok(fb.clone().with_frame_index(frame_index))
            }
            _ => Ok(Mask::full(k, frame_index)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn map(k: usize, values: Vec<f64>) -> ProbabilityMap {
        ProbabilityMap::from_weights(k, &values).unwrap()
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget(0.5, 8).unwrap(), 32);
        assert_eq!(budget(0.05, 8).unwrap(), 4);
        assert_eq!(budget(1.0, 8).unwrap(), 64);
        assert_eq!(budget(0.10, 8).unwrap(), 7);
        assert_eq!(budget(0.85, 8).unwrap(), 55);
        assert_eq!(budget(0.001, 2).unwrap(), 1);
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(budget(bad, 8), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn one_hot_always_selected() {
        let mut v = vec![0.0; 64];
        v[37] = 1.0;
        let m = map(8, v);
        for rate in [0.05, 0.1, 0.25, 0.5, 1.0] {
            assert!(select_top(&m, rate, 0).unwrap().get(37));
        }
    }

    #[test]
    fn uniform_tie_break() {
        let m = map(2, vec![1.0; 4]);
        let mask = select_top(&m, 0.5, 0).unwrap();
        assert_eq!(mask.bits(), &[true, true, false, false]);
    }

    #[test]
    fn select_top_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            // coarse values so ties actually occur
            let v: Vec<f64> = (0..64).map(|_| rng.random_range(0..6) as f64).collect();
            let m = map(8, v.clone());
            let rate = [0.05, 0.1, 0.25, 0.5, 0.75, 0.85][rng.random_range(0..6)];
            let n = budget(rate, 8).unwrap();
            let mut keyed: Vec<(f64, usize)> = m.values().iter().copied().zip(0..).collect();
            keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut expected = [false; 64];
            for &(_, i) in &keyed[..n] {
                expected[i] = true;
            }
            assert_eq!(select_top(&m, rate, 0).unwrap().bits(), &expected[..]);
        }
    }

    #[test]
    fn random_mask_saturation_and_determinism() {
        for seed in 0..10 {
            assert!(random_mask(1.0, 8, seed).unwrap().is_full());
        }
        assert_eq!(random_mask(0.25, 8, 42).unwrap(), random_mask(0.25, 8, 42).unwrap());
    }

    #[test]
    fn random_mask_is_uniform() {
        let draws = 10_000u64;
        let mut counts = [0u32; 64];
        for seed in 0..draws {
            let m = random_mask(0.25, 8, frame_seed(99, seed as u32)).unwrap();
            assert_eq!(m.popcount(), 16);
            for i in m.selected() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = ScheduleConfig::new(0.25, SelectionMethod::Dqn, 1);
        assert!(schedule(2, 8, &cfg, None).unwrap().is_full());
        assert!(schedule(10, 8, &cfg, None).unwrap().is_full());

        let fb = random_mask(0.25, 8, 3).unwrap().with_frame_index(10);
        let got = schedule(10, 8, &cfg, Some(&fb)).unwrap();
        assert_eq!(got, fb);

        // stale feedback outside its validity window fails open
        assert!(schedule(11, 8, &cfg, Some(&fb)).unwrap().is_full());
        let mut periodic = cfg.clone();
        periodic.feedback_period = 3;
        assert_eq!(schedule(12, 8, &periodic, Some(&fb)).unwrap().bits(), fb.bits());
        assert!(schedule(13, 8, &periodic, Some(&fb)).unwrap().is_full());

        let random = ScheduleConfig::new(0.25, SelectionMethod::Random, 5);
        let a = schedule(7, 8, &random, None).unwrap();
        assert_eq!(a.popcount(), 16);
        assert_eq!(a, schedule(7, 8, &random, None).unwrap());
        assert!(schedule(3, 8, &random, None).unwrap().is_full());
    }

    proptest! {
        #[test]
        fn select_top_scale_invariant(
            values in prop::collection::vec(0.0f64..10.0, 64),
            scale in 0.01f64..100.0,
            rate in prop::sample::select(vec![0.05, 0.1, 0.25, 0.5, 0.75]),
        ) {
            prop_assume!(values.iter().sum::<f64>() > 0.0);
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let a = select_top(&map(8, values), rate, 0).unwrap();
            let b = select_top(&map(8, scaled), rate, 0).unwrap();
            prop_assert_eq!(a.popcount(), budget(rate, 8).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
