//! Run configuration file (TOML).
//!
//! Every section and key is optional; missing keys take the defaults below,
//! unknown keys are rejected. Relative dataset paths resolve against the
//! directory holding the config file.
//!
//! ```toml
//! [data]
//! train_manifest = "data/train"      # manifest file or directory
//! generated_manifest = "data/gen"    # optional, mixed in with p_gen
//! p_gen = 0.0
//! test_manifest = "data/test"
//!
//! [model]        # see ModelConfig
//! [diffusion]    # steps = 1000, beta_start = 1e-4, beta_end = 0.02
//! [loss]         # use_mse / use_l1 / use_logl1 = true, log_eps = 1e-4
//! [training]     # steps = 70000, lr = 1e-4, batch_size = 4, patch_size = 256, ...
//! [sampling]     # sampler = "ddpm" | "ddim", steps = 1000, seed = 0
//! [evaluation]   # grid = 3, seed = 0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::objective::LossConfig;
use crate::schedule::DiffusionConfig;
use crate::unet::{ModelConfig, PredictionTarget};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_manifest: Option<PathBuf>,
    pub p_gen: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Initial learning rate, decayed linearly to zero.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Patch side in RGB pixels (the RAW pack is half of it).
    pub patch_size: usize,
    /// Random 90-degree rotations and flips.
    pub augment: bool,
    pub seed: u64,
    /// Metrics row every `log_interval` steps.
    pub log_interval: usize,
    /// Checkpoint every `checkpoint_interval` steps (0: only the final one).
    pub checkpoint_interval: usize,
    /// Bit-reproducible mode: wall-clock columns are written as zero.
    pub strict_deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 70_000,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 4,
            patch_size: 256,
            augment: true,
            seed: 0,
            log_interval: 100,
            checkpoint_interval: 5000,
            strict_deterministic: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ddpm,
    Ddim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub sampler: SamplerKind,
    /// Number of model evaluations; must equal the diffusion length for DDPM.
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            sampler: SamplerKind::Ddpm,
            steps: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Cells per side of the evaluation grid.
    pub grid: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { grid: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvalConfig,
}

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!(Config, "training.steps must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "training.batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            bail!(Config, "training.lr must be non-negative, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "training.beta1 and training.beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Config, "training.adam_eps must be positive and training.weight_decay non-negative");
        }
        if self.log_interval == 0 {
            bail!(Config, "training.log_interval must be at least 1");
        }
        Ok(())
    }
}

impl SamplingConfig {
    pub fn validate(&self, diffusion_steps: usize) -> Result<()> {
        if self.steps == 0 {
            bail!(Config, "sampling.steps must be at least 1");
        }
        match self.sampler {
            SamplerKind::Ddpm if self.steps != diffusion_steps => bail!(
                Config,
                "sampling.steps = {} but DDPM runs all {diffusion_steps} diffusion steps",
                self.steps
            ),
            SamplerKind::Ddim if self.steps > diffusion_steps => bail!(
                Config,
                "sampling.steps = {} exceeds the {diffusion_steps} diffusion steps",
                self.steps
            ),
            _ => Ok(()),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative dataset paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.train_manifest,
            &mut cfg.data.generated_manifest,
            &mut cfg.data.test_manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.diffusion.build()?;
        self.loss.validate()?;
        self.training.validate()?;
        self.sampling.validate(self.diffusion.steps)?;
        if !(0.0..=1.0).contains(&self.data.p_gen) {
            bail!(Config, "data.p_gen must lie in [0, 1], got {}", self.data.p_gen);
        }
        if self.data.p_gen > 0.0 && self.data.generated_manifest.is_none() {
            bail!(Config, "data.p_gen = {} needs data.generated_manifest", self.data.p_gen);
        }
        let p = self.training.patch_size;
        let m = 2 * self.model.size_multiple();
        if p == 0 || p % m != 0 {
            bail!(
                Config,
                "training.patch_size = {p} must be a positive multiple of {m} for {} levels",
                self.model.levels()
            );
        }
        if self.evaluation.grid == 0 {
            bail!(Config, "evaluation.grid must be at least 1");
        }
        Ok(())
    }

    /// Loss settings actually used in training: the logarithmic term is
    /// defined on RAW intensities and is dropped for noise prediction.
    pub fn effective_loss(&self) -> LossConfig {
        let mut l = self.loss.clone();
        if self.model.prediction_target == PredictionTarget::Noise {
            l.use_logl1 = false;
            if !(l.use_mse || l.use_l1) {
                l.use_mse = true;
            }
        }
        l
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the fully resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let file = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&file, self.to_toml()?).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }
}
