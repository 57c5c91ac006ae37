use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::{SceneConfig, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::importance::ImportanceConfig;
use crate::scheduler::{check_rate, SelectionMethod};
use crate::transport::ChannelConfig;

/// Selection strategy paired with whether the receiver interpolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "random+interp")]
    RandomInterp,
    #[serde(rename = "dqn")]
    Dqn,
    #[serde(rename = "dqn+interp")]
    DqnInterp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::RandomInterp, Method::Dqn, Method::DqnInterp];

    pub fn selection(self) -> SelectionMethod {
        match self {
            Method::Random | Method::RandomInterp => SelectionMethod::Random,
            Method::Dqn | Method::DqnInterp => SelectionMethod::Dqn,
        }
    }

    pub fn interpolates(self) -> bool {
        matches!(self, Method::RandomInterp | Method::DqnInterp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::RandomInterp => "random+interp",
            Method::Dqn => "dqn",
            Method::DqnInterp => "dqn+interp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cells per grid side.
    pub k: usize,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub bootstrap_frames: u32,
    pub feedback_period: u32,
    /// Detection proxy threshold.
    pub theta: f64,
    /// Offset the scene's texture/start seeds by the episode seed.
    pub vary_scene_with_seed: bool,
    /// Directory of PGM frames plus `annotations.csv`; replaces the synthetic scene.
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub scene: SceneConfig,
    pub channel: ChannelConfig,
    pub importance: ImportanceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k: 8,
            rates: vec![0.05, 0.10, 0.25, 0.50, 0.75, 0.85, 1.0],
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            bootstrap_frames: 4,
            feedback_period: 1,
            theta: DEFAULT_THETA,
            vary_scene_with_seed: true,
            dataset: None,
            output_dir: None,
            scene: SceneConfig::default(),
            channel: ChannelConfig::default(),
            importance: ImportanceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))?;
        // relative paths are resolved against the config file's directory
        if let Some(parent) = path.parent() {
            for p in [cfg.dataset.as_mut(), cfg.output_dir.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = parent.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 255 {
            return Err(Error::Config(format!("k = {} outside 1..=255", self.k)));
        }
        if self.rates.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("rates, methods and seeds must be non-empty".into()));
        }
        for &r in &self.rates {
            check_rate(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.bootstrap_frames < 1 || self.feedback_period < 1 {
            return Err(Error::Config("bootstrap_frames and feedback_period must be >= 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta {} outside (0, 1]", self.theta)));
        }
        if self.dataset.is_none() {
            self.scene
                .validate(self.bootstrap_frames + 1)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.channel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.importance.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn scene_for_seed(&self, seed: u64) -> SceneConfig {
        let mut scene = self.scene.clone();
        if self.vary_scene_with_seed {
            scene.background_seed = scene.background_seed.wrapping_add(seed);
            scene.object_seed = scene.object_seed.wrapping_add(seed);
        }
        scene
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn typos_are_rejected_at_any_depth() {
        assert!(ExperimentConfig::from_toml("rate = [0.5]").is_err());
        assert!(ExperimentConfig::from_toml("[importance]\ngama = 0.5").is_err());
        assert!(ExperimentConfig::from_toml("[scene]\nframes = 10").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            rates = [0.5]
            methods = ["dqn+interp", "random"]
            [importance]
            lambda = 10.0
            [channel]
            loss_probability = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::DqnInterp, Method::Random]);
        assert_eq!(cfg.importance.lambda, 10.0);
        assert_eq!(cfg.importance.gamma, 0.9);
        assert_eq!(cfg.channel.loss_probability, 0.1);
        assert_eq!(cfg.k, 8);
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            "rates = [0.0]",
            "seeds = []",
            "methods = [\"magic\"]",
            "bogus_key = 1",
            "[importance]\ngamma = 1.0",
            "[channel]\nloss_probability = 2.0",
            "theta = 0.0",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(Method::DqnInterp.interpolates());
        assert_eq!(Method::RandomInterp.selection(), SelectionMethod::Random);
    }
}
