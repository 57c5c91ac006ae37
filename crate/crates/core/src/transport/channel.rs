use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-state Gilbert–Elliott burst loss. In the good state datagrams drop
/// with the channel's `loss_probability`, in the bad state with `bad_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstLoss {
    pub good_to_bad: f64,
    pub bad_to_good: f64,
    pub bad_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub loss_probability: f64,
    pub seed: u64,
    pub reorder: bool,
    pub burst: Option<BurstLoss>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            loss_probability: 0.0,
            seed: 0,
            reorder: false,
            burst: None,
        }
    }
}

impl ChannelConfig {
    pub fn lossless(seed: u64) -> Self {
        ChannelConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")))
            }
        };
        prob("loss_probability", self.loss_probability)?;
        if let Some(b) = &self.burst {
            prob("good_to_bad", b.good_to_bad)?;
            prob("bad_to_good", b.bad_to_good)?;
            prob("bad_loss", b.bad_loss)?;
        }
        Ok(())
    }
}

/// Seeded in-process lossy link. Successive calls continue one random stream.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    in_burst: bool,
    sent: u64,
    delivered: u64,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            in_burst: false,
            sent: 0,
            delivered: 0,
        })
    }

    fn survives(&mut self) -> bool {
        let p = match self.cfg.burst {
            None => self.cfg.loss_probability,
            Some(b) => {
                let flip = if self.in_burst { b.bad_to_good } else { b.good_to_bad };
                if self.rng.random_bool(flip) {
                    self.in_burst = !self.in_burst;
                }
                if self.in_burst {
                    b.bad_loss
                } else {
                    self.cfg.loss_probability
                }
            }
        };
        !self.rng.random_bool(p)
    }

    pub fn transmit(&mut self, datagrams: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        self.sent += datagrams.len() as u64;
        let mut out: Vec<Vec<u8>> = datagrams.into_iter().filter(|_| self.survives()).collect();
        if self.cfg.reorder {
            out.shuffle(&mut self.rng);
        }
        self.delivered += out.len() as u64;
        out
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}

/// One-shot transmission through a freshly seeded channel.
pub fn channel_transmit(datagrams: Vec<Vec<u8>>, cfg: &ChannelConfig) -> Result<Vec<Vec<u8>>> {
    Ok(Channel::new(cfg.clone())?.transmit(datagrams))
}
