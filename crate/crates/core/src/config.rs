//! Run configuration: one record holding every tunable constant, with a
//! full-scale and a desk-scale profile and a plain `key = value` file
//! format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PhantomConfig;
use crate::error::{Error, Result};
use crate::nets::{LocNetConfig, SegNetConfig};
use crate::pipeline::{Connectivity, PipelineConfig};
use crate::training::{SgdConfig, SUBVOLUME_FRACTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected full or desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub pipeline: PipelineConfig,
    pub loc_net: LocNetConfig,
    pub seg_net: SegNetConfig,
    pub loc_sgd: SgdConfig,
    pub seg_sgd: SgdConfig,
    pub loc_stride_pos: usize,
    pub loc_stride_neg: usize,
    /// Cap per class after balancing; `None` keeps every balanced example.
    pub loc_examples_per_class: Option<usize>,
    pub subvolume_fraction: f64,
    pub seg_samples_per_epoch: usize,
}

impl RunConfig {
    pub fn full() -> Self {
        RunConfig {
            profile: Profile::Full,
            seed: 0,
            phantom: PhantomConfig::full(),
            pipeline: PipelineConfig::full(),
            loc_net: LocNetConfig::full(),
            seg_net: SegNetConfig::full(),
            loc_sgd: SgdConfig::localization(),
            seg_sgd: SgdConfig::segmentation(),
            loc_stride_pos: 2,
            loc_stride_neg: 3,
            loc_examples_per_class: None,
            subvolume_fraction: SUBVOLUME_FRACTION,
            seg_samples_per_epoch: 22_000,
        }
    }

    /// Phantoms near 96³ with window 24 and box 48.
    pub fn desk() -> Self {
        RunConfig {
            profile: Profile::Desk,
            phantom: PhantomConfig::desk(),
            pipeline: PipelineConfig::desk(),
            loc_net: LocNetConfig::desk(),
            seg_net: SegNetConfig::desk(),
            loc_sgd: SgdConfig {
                batch_size: 32,
                ..SgdConfig::localization()
            },
            // few samples per epoch, so a larger step to converge in five epochs
            seg_sgd: SgdConfig {
                learning_rate: 0.1,
                ..SgdConfig::segmentation()
            },
            loc_examples_per_class: Some(1_000),
            seg_samples_per_epoch: 160,
            ..Self::full()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self::full(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Sets one constant by key. `profile` is not a key here: pick the
    /// profile first, then override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        let p = &mut self.pipeline;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "window" => {
                p.window = parse(key, value)?;
                self.loc_net.input_side = p.window;
            }
            "box_side" => {
                p.box_side = parse(key, value)?;
                self.seg_net.input_side = p.box_side;
            }
            "stride" => p.stride = parse(key, value)?,
            "loc_threshold" => p.loc_threshold = parse(key, value)?,
            "seg_threshold" => p.seg_threshold = parse(key, value)?,
            "min_component" => p.min_component = parse(key, value)?,
            "connectivity" => {
                p.connectivity = match value {
                    "6" => Connectivity::Six,
                    "18" => Connectivity::Eighteen,
                    "26" => Connectivity::TwentySix,
                    _ => return Err(Error::Config(format!("connectivity must be 6, 18 or 26, got {value:?}"))),
                }
            }
            "window_batch" => p.batch = parse(key, value)?,
            "loc_stride_pos" => self.loc_stride_pos = parse(key, value)?,
            "loc_stride_neg" => self.loc_stride_neg = parse(key, value)?,
            "loc_examples_per_class" => {
                self.loc_examples_per_class = match value {
                    "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "subvolume_fraction" => self.subvolume_fraction = parse(key, value)?,
            "seg_samples_per_epoch" => self.seg_samples_per_epoch = parse(key, value)?,
            "speckle_looks" => self.phantom.speckle_looks = parse(key, value)?,
            _ => {
                let (sgd, field) = match key.split_once('_') {
                    Some(("loc", f)) => (&mut self.loc_sgd, f),
                    Some(("seg", f)) => (&mut self.seg_sgd, f),
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                };
                match field {
                    "lr" => sgd.learning_rate = parse(key, value)?,
                    "momentum" => sgd.momentum = parse(key, value)?,
                    "weight_decay" => sgd.weight_decay = parse(key, value)?,
                    "epochs" => sgd.epochs = parse(key, value)?,
                    "decay_factor" => sgd.decay_factor = parse(key, value)?,
                    "decay_after" => sgd.decay_after = parse(key, value)?,
                    "batch" => sgd.batch_size = parse(key, value)?,
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.loc_sgd.validate()?;
        self.seg_sgd.validate()?;
        if self.loc_net.input_side != self.pipeline.window || self.seg_net.input_side != self.pipeline.box_side {
            return Err(Error::Config("net input sides must match window and box_side".into()));
        }
        if self.loc_stride_pos == 0 || self.loc_stride_neg == 0 || self.seg_samples_per_epoch == 0 {
            return Err(Error::Config("strides and sample counts must be positive".into()));
        }
        if !(self.subvolume_fraction > 0.0 && self.subvolume_fraction <= 1.0) {
            return Err(Error::Config(format!("subvolume fraction {} outside (0, 1]", self.subvolume_fraction)));
        }
        Ok(())
    }

    /// Builds a config from a profile, file entries, then overrides, each
    /// later source winning. A `profile` entry in the file is honoured only
    /// when `profile` is `None`.
    pub fn resolve(profile: Option<Profile>, file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        let from_file = file.iter().rev().find(|(k, _)| k == "profile").map(|(_, v)| v.parse()).transpose()?;
        let mut cfg = Self::for_profile(profile.or(from_file).unwrap_or(Profile::Full));
        for (k, v) in file.iter().chain(overrides).filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_defaults() {
        let c = RunConfig::full();
        assert_eq!(c.pipeline.loc_threshold, 0.95);
        assert_eq!(c.pipeline.seg_threshold, 0.92);
        assert_eq!(c.pipeline.min_component, 300);
        assert_eq!((c.loc_stride_pos, c.loc_stride_neg), (2, 3));
        assert_eq!(c.loc_sgd.batch_size, 200);
        assert_eq!(c.seg_sgd.batch_size, 4);
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn later_sources_win() {
        let file = parse_key_values("profile = desk\nseg_threshold = 0.5 # lower\n\nseed=3").unwrap();
        let over = vec![("seed".to_string(), "9".to_string())];
        let c = RunConfig::resolve(None, &file, &over).unwrap();
        assert_eq!(c.profile, Profile::Desk);
        assert_eq!(c.pipeline.seg_threshold, 0.5);
        assert_eq!(c.seed, 9);
        let c = RunConfig::resolve(Some(Profile::Full), &file, &[]).unwrap();
        assert_eq!(c.profile, Profile::Full);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut c = RunConfig::full();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("loc_nope", "1").is_err());
        assert!(c.set("seed", "x").is_err());
        assert!(parse_key_values("justakey").is_err());
    }
}
