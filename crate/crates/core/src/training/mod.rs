//! Training loop, metrics log and checkpoint/resume.
//!
//! One `ChaCha8Rng` stream (seeded from `training.seed`) drives batch
//! sampling, timesteps and noise; its position is stored in every
//! checkpoint so a resumed run continues the exact same sequence. Parameter
//! initialization uses a separate stream derived from the same seed.

mod data;
mod optim;

pub use data::{
    crop_patch, load_pairs, random_patch, sample_training_batch, Patch, TrainingBatch, TrainingData, TrainingPair, D4,
};
pub use optim::{lr_at, AdamW, AdamWConfig};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rawdiff_tensor::{Graph, Tensor};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::error::{bail, Error, Result};
use crate::nn::{Binding, ParamStore};
use crate::objective::{loss_total, LossBreakdown};
use crate::raw::synth::derive_seed;
use crate::raw::DatasetManifest;
use crate::schedule::{q_sample, VarianceSchedule};
use crate::unet::{PredictionTarget, RawDiffusionModel};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,lr,loss_total,loss_mse,loss_l1,loss_logl1,wall_time";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
const INIT_STREAM: u64 = 0x1417;

/// Metrics of one optimizer step. `step` is the 0-based index of the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl StepMetrics {
    pub fn csv_row(&self, wall_time: f64) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, self.loss.total, self.loss.mse, self.loss.l1, self.loss.logl1, wall_time
        )
    }
}

/// `n` independent timesteps, uniform over `1..=big_t`.
pub fn sample_timesteps<R: Rng + ?Sized>(n: usize, big_t: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=big_t)).collect()
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: RawDiffusionModel,
    pub params: ParamStore<f32>,
    pub optimizer: AdamW,
    pub schedule: VarianceSchedule,
    pub rng: ChaCha8Rng,
    /// Completed updates.
    pub step: usize,
}

/// Builds a model and its freshly initialized parameters.
pub fn init_model(config: &RunConfig) -> Result<(RawDiffusionModel, ParamStore<f32>)> {
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.training.seed, INIT_STREAM));
    let model = RawDiffusionModel::new(&config.model, &mut params, &mut rng)?;
    Ok((model, params))
}

/// Model and parameters from a checkpoint.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(RawDiffusionModel, ParamStore<f32>)> {
    let (model, mut params) = init_model(&ck.meta.config)?;
    params.load_from(&ck.group("param"))?;
    Ok((model, params))
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (model, params) = init_model(&config)?;
        let optimizer = AdamW::new(adam_config(&config), &params);
        Ok(Trainer {
            schedule: config.diffusion.build()?,
            rng: ChaCha8Rng::seed_from_u64(config.training.seed),
            model,
            params,
            optimizer,
            config,
            step: 0,
        })
    }

    /// Restores a trainer; refuses unless `config` equals the stored one.
    pub fn from_checkpoint(ck: &Checkpoint, config: &RunConfig) -> Result<Self> {
        if &ck.meta.config != config {
            bail!(
                Config,
                "checkpoint was written with a different configuration; resume needs an identical config"
            );
        }
        let mut t = Trainer::new(config.clone())?;
        t.params.load_from(&ck.group("param"))?;
        let load_moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
            let mut store = t.params.clone();
            store.load_from(&ck.group(prefix))?;
            Ok(store.iter().map(|(_, v)| v.clone()).collect())
        };
        t.optimizer.m = load_moments("adam_m")?;
        t.optimizer.v = load_moments("adam_v")?;
        t.optimizer.t = ck.meta.adam_t;
        t.step = ck.meta.step;
        t.rng = ChaCha8Rng::from_seed(ck.meta.rng_seed);
        let pos: u128 = ck.meta.rng_word_pos.parse().map_err(|_| Error::Data("bad rng position".into()))?;
        t.rng.set_word_pos(pos);
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (name, v) in self.params.iter() {
            tensors.push((format!("param/{name}"), v.clone()));
        }
        for (i, (name, _)) in self.params.iter().enumerate() {
            tensors.push((format!("adam_m/{name}"), self.optimizer.m[i].clone()));
        }
        for (i, (name, _)) in self.params.iter().enumerate() {
            tensors.push((format!("adam_v/{name}"), self.optimizer.v[i].clone()));
        }
        Checkpoint {
            meta: CheckpointMeta {
                step: self.step,
                rng_seed: self.rng.get_seed(),
                rng_word_pos: self.rng.get_word_pos().to_string(),
                adam_t: self.optimizer.t,
                config: self.config.clone(),
            },
            tensors,
        }
    }

    /// One update on a freshly sampled batch.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<StepMetrics> {
        let tc = &self.config.training;
        let batch = sample_training_batch(data, tc.batch_size, tc.patch_size, tc.augment, &mut self.rng)?;
        self.train_on_batch(&batch)
    }

    /// One update on a given batch: per-item `t ~ U{1..T}`, `eps ~ N(0, I)`,
    /// `x_t = q_sample(x0, t, eps)`, loss against `x0` (or `eps`).
    pub fn train_on_batch(&mut self, batch: &TrainingBatch) -> Result<StepMetrics> {
        let n = batch.raw.shape()[0];
        let per = batch.raw.numel() / n;
        let big_t = self.schedule.len();
        let ts = sample_timesteps(n, big_t, &mut self.rng);
        let eps: Vec<f32> = (0..batch.raw.numel()).map(|_| self.rng.sample(StandardNormal)).collect();
        let mut xt = Vec::with_capacity(batch.raw.numel());
        for (i, &t) in ts.iter().enumerate() {
            let r = i * per..(i + 1) * per;
            xt.extend(q_sample(&batch.raw.data()[r.clone()], t, &eps[r], &self.schedule)?);
        }
        let target = match self.model.config.prediction_target {
            PredictionTarget::X0 => batch.raw.clone(),
            PredictionTarget::Noise => Tensor::from_vec(batch.raw.shape(), eps),
        };
        let loss_cfg = self.config.effective_loss();
        let lr = lr_at(self.config.training.lr, self.step, self.config.training.steps);
        let grads = {
            let g = Graph::new();
            let p = Binding::new(&g, &self.params);
            let pred = self.model.forward(
                &p,
                g.constant(Tensor::from_vec(batch.raw.shape(), xt)),
                g.constant(batch.rgb.clone()),
                &ts,
            )?;
            let (loss, breakdown) = loss_total(pred, g.constant(target), &loss_cfg)?;
            if !breakdown.total.is_finite() {
                bail!(
                    Numeric,
                    "non-finite loss at step {}: total={} mse={} l1={} logl1={} timesteps={ts:?}",
                    self.step,
                    breakdown.total,
                    breakdown.mse,
                    breakdown.l1,
                    breakdown.logl1
                );
            }
            let mut grads = g.backward(loss);
            let list: Vec<_> = p
                .bound()
                .into_iter()
                .filter_map(|(id, v)| grads.take(v).map(|t| (id, t)))
                .collect();
            (list, breakdown)
        };
        let (list, breakdown) = grads;
        self.optimizer.step(&mut self.params, &list, lr);
        let m = StepMetrics {
            step: self.step,
            lr,
            loss: breakdown,
        };
        self.step += 1;
        Ok(m)
    }
}

fn adam_config(c: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        beta1: c.training.beta1,
        beta2: c.training.beta2,
        eps: c.training.adam_eps,
        weight_decay: c.training.weight_decay,
    }
}

/// Loads the training (and optional generated) manifests named in the
/// config.
pub fn load_training_data(config: &RunConfig) -> Result<TrainingData> {
    let d = &config.data;
    let original = match &d.train_manifest {
        Some(p) if d.p_gen < 1.0 => load_pairs(&DatasetManifest::load(p)?)?,
        Some(_) => Vec::new(),
        None if d.p_gen < 1.0 => bail!(Config, "data.train_manifest is required for training"),
        None => Vec::new(),
    };
    let generated = match &d.generated_manifest {
        Some(p) if d.p_gen > 0.0 => load_pairs(&DatasetManifest::load(p)?)?,
        _ => Vec::new(),
    };
    let data = TrainingData::new(original, generated, d.p_gen)?;
    data.check_patch(config.training.patch_size)?;
    Ok(data)
}

pub fn checkpoint_path(run_dir: &Path, step: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.ckpt"))
}

/// Highest-step checkpoint under `run_dir/checkpoints`.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = e.map_err(|e| Error::io(&dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(s) = step {
            if best.as_ref().map_or(true, |(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub final_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub steps: usize,
    pub last: Option<StepMetrics>,
}

/// Keeps only metrics rows for steps below `step`.
fn truncate_metrics(path: &Path, step: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s < step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs (or resumes) training in `run_dir`: resolved config echo, metrics
/// log, periodic checkpoints and `final.ckpt`.
pub fn fit(config: &RunConfig, run_dir: &Path, resume: bool) -> Result<FitSummary> {
    config.validate()?;
    fs::create_dir_all(run_dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(run_dir, e))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut trainer = if resume {
        let Some(path) = latest_checkpoint(run_dir)? else {
            bail!(Data, "nothing to resume: no checkpoints in {}", run_dir.join(CHECKPOINT_DIR).display());
        };
        let t = Trainer::from_checkpoint(&load_checkpoint(&path)?, config)?;
        if metrics_path.is_file() {
            truncate_metrics(&metrics_path, t.step)?;
        } else {
            fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&metrics_path, e))?;
        }
        log::info!("resuming from {} at step {}", path.display(), t.step);
        t
    } else {
        if latest_checkpoint(run_dir)?.is_some() {
            bail!(
                Data,
                "{} already holds checkpoints; pass --resume or use a new run directory",
                run_dir.display()
            );
        }
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&metrics_path, e))?;
        Trainer::new(config.clone())?
    };
    config.echo(run_dir)?;
    let data = load_training_data(config)?;
    let tc = config.training.clone();
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let start = Instant::now();
    let mut last = None;
    while trainer.step < tc.steps {
        let m = match trainer.train_step(&data) {
            Ok(m) => m,
            Err(e @ Error::Numeric(_)) => {
                let diag = run_dir.join("diagnostic.txt");
                let _ = fs::write(&diag, format!("{e}\n"));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if (m.step + 1) % tc.log_interval == 0 {
            let wall = if tc.strict_deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
            writeln!(log, "{}", m.csv_row(wall)).map_err(|e| Error::io(&metrics_path, e))?;
            log::info!("step {} lr {:.3e} loss {:.5}", m.step, m.lr, m.loss.total);
        }
        if tc.checkpoint_interval > 0 && trainer.step % tc.checkpoint_interval == 0 && trainer.step < tc.steps {
            save_checkpoint(&checkpoint_path(run_dir, trainer.step), &trainer.checkpoint())?;
        }
        last = Some(m);
    }
    let ck = trainer.checkpoint();
    save_checkpoint(&checkpoint_path(run_dir, trainer.step), &ck)?;
    let final_path = run_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &ck)?;
    Ok(FitSummary {
        final_checkpoint: final_path,
        metrics_log: metrics_path,
        steps: trainer.step,
        last,
    })
}
