//! Run configuration shared by every command. Each field is optional so a
//! file config and command-line flags can be layered (flags win).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitMode, SynthConfig, OBJECTS};
use crate::error::{invalid, io_err, Error, Result};
use crate::eval::Protocol;
use crate::fusion::{FusionConfig, FusionStrategy, Modality};
use crate::memory::TrainingConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub data: Option<PathBuf>,
    pub objects: Option<usize>,
    pub keys_per_object: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub observation_dim: Option<usize>,
    pub instruction_dim: Option<usize>,
    pub hyper_dim: Option<usize>,
    pub fusion: Option<FusionStrategy>,
    pub normalize_inputs: Option<bool>,
    pub observation_seed: Option<u64>,
    pub instruction_seed: Option<u64>,
    pub modality: Option<Modality>,
    pub eta: Option<f64>,
    pub refine_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub split: Option<String>,
    pub protocol: Option<Protocol>,
    pub fractions: Option<Vec<f64>>,
    pub cross_splits: Option<Vec<String>>,
    pub knn_k: Option<usize>,
    pub max_rounds: Option<usize>,
    pub corruption_rate: Option<f64>,
    pub strict: Option<bool>,
    pub jobs: Option<usize>,
    /// Opaque document handed to external agents.
    pub agent_config: Option<serde_json::Value>,
}

macro_rules! layer {
    ($base:ident, $over:ident, $($field:ident),*) => {
        RunConfig { $($field: $over.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_str(&text)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        layer!(
            base, over, seed, seeds, data, objects, keys_per_object, noise_sigma, observation_dim,
            instruction_dim, hyper_dim, fusion, normalize_inputs, observation_seed,
            instruction_seed, modality, eta, refine_epochs, early_stop_patience, split, protocol,
            fractions, cross_splits, knn_k, max_rounds, corruption_rate, strict, jobs, agent_config
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<usize>| match v {
            Some(0) => Err(invalid(format!("{name} must be positive"))),
            _ => Ok(()),
        };
        positive("hyper_dim", self.hyper_dim)?;
        positive("observation_dim", self.observation_dim)?;
        positive("instruction_dim", self.instruction_dim)?;
        positive("keys_per_object", self.keys_per_object)?;
        positive("knn_k", self.knn_k)?;
        positive("jobs", self.jobs)?;
        if let Some(n) = self.objects {
            if n == 0 || n > OBJECTS.len() {
                return Err(invalid(format!("objects must be in 1..={}", OBJECTS.len())));
            }
        }
        if let Some(s) = self.noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid("noise_sigma must be finite and non-negative"));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(invalid("eta must be positive"));
            }
        }
        if let Some(r) = self.corruption_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid("corruption_rate must be in [0, 1]"));
            }
        }
        if let Some(fs) = &self.fractions {
            if fs.is_empty() || fs.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(invalid("fractions must be non-empty and in (0, 1]"));
            }
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(invalid("seeds must be non-empty"));
            }
        }
        self.split_mode()?;
        self.cross_split_modes()?;
        Ok(())
    }

    pub fn split_mode(&self) -> Result<SplitMode> {
        self.split.as_deref().unwrap_or("row_random:0.8").parse()
    }

    pub fn cross_split_modes(&self) -> Result<Option<Vec<SplitMode>>> {
        self.cross_splits
            .as_ref()
            .map(|v| v.iter().map(|s| s.parse::<SplitMode>()).collect::<Result<Vec<_>>>())
            .transpose()
    }

    pub fn seed_or(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    pub fn synth(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            objects: self.objects.unwrap_or(d.objects),
            keys_per_object: self.keys_per_object.unwrap_or(d.keys_per_object),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            seed: self.seed_or(d.seed),
            observation_dim: self.observation_dim.unwrap_or(d.observation_dim),
            instruction_dim: self.instruction_dim.unwrap_or(d.instruction_dim),
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let d = FusionConfig::default();
        FusionConfig {
            strategy: self.fusion.unwrap_or(d.strategy),
            normalize_inputs: self.normalize_inputs.unwrap_or(d.normalize_inputs),
            observation_seed: self.observation_seed.unwrap_or(d.observation_seed),
            instruction_seed: self.instruction_seed.unwrap_or(d.instruction_seed),
            hyper_dim: self.hyper_dim.unwrap_or(d.hyper_dim),
        }
    }

    pub fn training(&self) -> TrainingConfig {
        let d = TrainingConfig::default();
        TrainingConfig {
            eta: self.eta.unwrap_or(d.eta),
            refine_epochs: self.refine_epochs.unwrap_or(d.refine_epochs),
            shuffle_seed: self.seed_or(d.shuffle_seed),
            early_stop_patience: self.early_stop_patience.unwrap_or(d.early_stop_patience),
        }
    }
}

impl std::str::FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_str(s)
    }
}
