use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{FeatureKind, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::network::{Scenario, TrainConfig};
use crate::robustness::Family;
use crate::sampler::{DEFAULT_PATCH_SIDE, POOL_FACTOR};
use crate::tensor::ScalarKind;

pub const SEED_ENV: &str = "ORIGIN_LENS_SEED";
pub const DEFAULT_PATCHES_PER_IMAGE: usize = 200;

/// Everything a pipeline run depends on. The seed lives in `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub patches_per_image: usize,
    pub patch_side: usize,
    pub pool_factor: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub frozen_weights: Option<PathBuf>,
    pub baselines: Vec<FeatureKind>,
    pub ridge: f64,
    pub families: Vec<Family>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            patches_per_image: DEFAULT_PATCHES_PER_IMAGE,
            patch_side: DEFAULT_PATCH_SIDE,
            pool_factor: POOL_FACTOR,
            train: TrainConfig::default(),
            frozen_weights: None,
            baselines: FeatureKind::ALL.to_vec(),
            ridge: DEFAULT_RIDGE,
            families: Family::ALL.to_vec(),
            workers: None,
        }
    }
}

/// Command-line values; each one that is set replaces the file/env value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub patches_per_image: Option<usize>,
    pub patch_side: Option<usize>,
    pub pool_factor: Option<usize>,
    pub scenario: Option<Scenario>,
    pub scalar: Option<ScalarKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub retention: Option<f64>,
    pub seed: Option<u64>,
    pub frozen_weights: Option<PathBuf>,
    pub baselines: Option<Vec<FeatureKind>>,
    pub families: Option<Vec<Family>>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Defaults, then the JSON file, then the seed variable, then flags.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: &ConfigOverrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = env_seed {
            cfg.train.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        macro_rules! set {
            ($src:ident => $($dst:ident).+) => {
                if let Some(v) = &o.$src {
                    self.$($dst).+ = v.clone();
                }
            };
        }
        set!(data_root => data_root);
        set!(out_dir => out_dir);
        set!(patches_per_image => patches_per_image);
        set!(patch_side => patch_side);
        set!(pool_factor => pool_factor);
        set!(scenario => train.scenario);
        set!(scalar => train.scalar);
        set!(epochs => train.epochs);
        set!(batch_size => train.batch_size);
        set!(lr => train.lr);
        set!(retention => train.retention);
        set!(seed => train.seed);
        set!(baselines => baselines);
        set!(families => families);
        if let Some(p) = &o.frozen_weights {
            self.frozen_weights = Some(p.clone());
        }
        if let Some(w) = o.workers {
            self.workers = Some(w);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches_per_image == 0 {
            return Err(Error::InvalidArgument("patches per image must be at least 1".into()));
        }
        if self.patch_side < 32 || self.patch_side % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch side {} must be a positive multiple of 32",
                self.patch_side
            )));
        }
        if self.pool_factor == 0 {
            return Err(Error::InvalidArgument("candidate multiplier must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge {} must be finite and >= 0",
                self.ridge
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("worker count must be at least 1".into()));
        }
        self.train.validate()
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
