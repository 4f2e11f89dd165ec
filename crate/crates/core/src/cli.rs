//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data or I/O error,
//! 3 runtime (numeric) failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rawdiff_tensor::Tensor;

use crate::checkpoint::load_checkpoint;
use crate::config::{RunConfig, SamplerKind, SamplingConfig};
use crate::error::{bail, Error, Result};
use crate::eval::{load_eval_images, patch_grid_eval, Generator};
use crate::raw::synth::derive_seed;
use crate::raw::{
    container, demosaic_bilinear, make_synthetic_dataset, png_io, raw_from_normalized, unpack_bayer, Cfa,
    DatasetManifest, IspParams, ManifestEntry, Planes, RawImage, RgbImage, Split,
};
use crate::sampling::{sample, ModelDenoiser};
use crate::training::{fit, model_from_checkpoint};
use crate::unet::{ModelConfig, RawDiffusionModel};

pub const RUN_DIR_ENV: &str = "RAWDIFF_RUN_DIR";

#[derive(Parser, Debug)]
#[command(name = "rawdiff", version, about = "RGB-guided diffusion for RAW image reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a procedural RAW/RGB dataset with a manifest.
    MakeSynth(MakeSynthArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Reconstruct RAW for one RGB image.
    Sample(SampleArgs),
    /// Convert an RGB corpus into a RAW dataset.
    GenerateDataset(GenerateArgs),
    /// Patch-grid PSNR/SSIM evaluation on a test manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct MakeSynthArgs {
    /// Number of pairs.
    #[arg(long)]
    pub n: usize,
    /// RGB size, `S` or `HxW` (even).
    #[arg(long, default_value = "128")]
    pub size: String,
    /// ISP preset: `default` or `identity`.
    #[arg(long, default_value = "default")]
    pub isp_preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $RAWDIFF_RUN_DIR/synth].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Run directory [default: $RAWDIFF_RUN_DIR/train].
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Overrides `training.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `data.train_manifest`.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplerArg {
    Ddpm,
    Ddim,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Ddpm => SamplerKind::Ddpm,
            SamplerArg::Ddim => SamplerKind::Ddim,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SamplerOpts {
    /// Sampler [default: from the checkpoint config].
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    /// Model evaluations [default: from the checkpoint config].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SamplerOpts {
    fn resolve(&self, base: &SamplingConfig) -> SamplingConfig {
        SamplingConfig {
            sampler: self.sampler.map_or(base.sampler, Into::into),
            steps: self.steps.map_or(base.steps, |s| s as usize),
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct RawLevels {
    /// Black level of written RAW files.
    #[arg(long, default_value_t = 256.0)]
    pub black_level: f64,
    /// White level of written RAW files.
    #[arg(long, default_value_t = 16383.0)]
    pub white_level: f64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// RGB PNG to condition on.
    #[arg(long)]
    pub rgb: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerOpts,
    /// Output RAW container (`.rawd`; a sidecar is written next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional 8-bit preview (bilinear demosaic, gamma 1/2.2).
    #[arg(long)]
    pub preview: Option<PathBuf>,
    #[command(flatten)]
    pub levels: RawLevels,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest (file or directory) listing the RGB images.
    #[arg(long)]
    pub rgb_manifest: PathBuf,
    #[arg(long, value_enum, default_value = "ddim")]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub levels: RawLevels,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained checkpoint (required unless --oracle).
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Test manifest (file or directory).
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerOpts,
    /// Cells per side [default: from the checkpoint config, else 3].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Report directory [default: $RAWDIFF_RUN_DIR/eval].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Test-only: return the ground truth instead of sampling a model.
    #[arg(long, hide = true)]
    pub oracle: bool,
}

fn default_run_dir(sub: &str) -> PathBuf {
    std::env::var_os(RUN_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(sub)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad size '{s}' (expected S or HxW)")))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Data(_) | Error::Io { .. } => 2,
        Error::Numeric(_) => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSynth(a) => cmd_make_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::GenerateDataset(a) => cmd_generate_dataset(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn cmd_make_synth(a: MakeSynthArgs) -> Result<()> {
    if a.n == 0 {
        bail!(InvalidArgument, "--n must be at least 1");
    }
    let size = parse_size(&a.size)?;
    let p = IspParams::preset(&a.isp_preset)?;
    let out = a.out_dir.unwrap_or_else(|| default_run_dir("synth"));
    make_synthetic_dataset(a.n, size, &p, a.seed, &out)?;
    println!("{}", out.join(crate::raw::manifest::MANIFEST_FILE).display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.steps {
        cfg.training.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    if let Some(m) = a.train_manifest {
        cfg.data.train_manifest = Some(m);
    }
    cfg.validate()?;
    let dir = a.run_dir.unwrap_or_else(|| default_run_dir("train"));
    let summary = fit(&cfg, &dir, a.resume)?;
    println!("{}", summary.final_checkpoint.display());
    Ok(())
}

struct LoadedModel {
    config: RunConfig,
    model: RawDiffusionModel,
    params: crate::nn::ParamStore<f32>,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let ck = load_checkpoint(path)?;
    let (model, params) = model_from_checkpoint(&ck)?;
    Ok(LoadedModel {
        config: ck.meta.config,
        model,
        params,
    })
}

/// Samples one RAW pack for a whole RGB image.
fn sample_image(m: &LoadedModel, rgb: &RgbImage, spec: &SamplingConfig, levels: &RawLevels) -> Result<RawImage> {
    let (h, w) = (rgb.height(), rgb.width());
    if h % 2 != 0 || w % 2 != 0 {
        bail!(InvalidArgument, "RGB size {h}x{w} must be even");
    }
    m.model.config.check_input(h / 2, w / 2)?;
    let schedule = m.config.diffusion.build()?;
    let den = ModelDenoiser {
        model: &m.model,
        params: &m.params,
        schedule: &schedule,
    };
    let x = Tensor::from_vec(&[1, 3, h, w], rgb.normalize().into_iter().map(|v| v as f32).collect());
    let out = sample(&den, &x, &schedule, spec)?;
    let vals: Vec<f64> = out.raw.data().iter().map(|&v| v as f64).collect();
    let mut raw = raw_from_normalized(&vals, h / 2, w / 2, levels.black_level, levels.white_level)?;
    raw.planes.data.iter_mut().for_each(|v| *v = v.round());
    Ok(raw)
}

/// Quick look at a RAW pack: bilinear demosaic and gamma 1/2.2, no colour
/// processing.
pub fn preview(raw: &RawImage) -> Result<RgbImage> {
    let lin: Vec<f64> = raw.normalize().iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
    let packed = Planes::from_vec(4, raw.height(), raw.width(), lin)?;
    let mut rgb = demosaic_bilinear(&unpack_bayer(&packed, Cfa::Rggb)?, Cfa::Rggb)?;
    rgb.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0).powf(1.0 / 2.2));
    RgbImage::new(rgb)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let spec = a.sampler.resolve(&m.config.sampling);
    let rgb = png_io::read_png(&a.rgb)?;
    let raw = sample_image(&m, &rgb, &spec, &a.levels)?;
    container::write_raw(&a.out, &raw)?;
    if let Some(p) = &a.preview {
        png_io::write_png(p, &preview(&raw)?)?;
    }
    println!("{}", a.out.display());
    Ok(())
}

/// Largest top-left crop whose RAW pack fits the model ladder.
fn fit_to_ladder(rgb: &RgbImage, cfg: &ModelConfig) -> Result<RgbImage> {
    let m = 2 * cfg.size_multiple();
    let (h, w) = ((rgb.height() / m) * m, (rgb.width() / m) * m);
    if h == 0 || w == 0 {
        bail!(Data, "RGB {}x{} is smaller than the minimum {m}x{m}", rgb.height(), rgb.width());
    }
    if (h, w) == (rgb.height(), rgb.width()) {
        return Ok(rgb.clone());
    }
    RgbImage::new(rgb.planes.crop(0, 0, h, w)?)
}

fn cmd_generate_dataset(a: GenerateArgs) -> Result<()> {
    let m = load_model(&a.checkpoint)?;
    let input = DatasetManifest::load(&a.rgb_manifest)?;
    let base = SamplingConfig {
        sampler: a.sampler.into(),
        steps: a.steps as usize,
        seed: a.seed,
    };
    for sub in ["raw", "rgb"] {
        let d = a.out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut out = DatasetManifest::new(Split::Train, a.seed);
    let mut failures = 0;
    for (i, e) in input.entries.iter().enumerate() {
        let spec = SamplingConfig {
            seed: derive_seed(a.seed, i as u64),
            ..base
        };
        match generate_one(&m, &input, e, i, &spec, &a) {
            Ok(entry) => out.entries.push(entry),
            Err(err) => {
                failures += 1;
                log::error!("{}: {err}", e.rgb);
            }
        }
    }
    if out.entries.is_empty() {
        bail!(Data, "no image could be converted ({failures} failures)");
    }
    let path = out.save(&a.out_dir)?;
    println!("{}", path.display());
    if failures > 0 {
        bail!(Data, "{failures} of {} images failed", input.entries.len());
    }
    Ok(())
}

fn generate_one(
    m: &LoadedModel,
    input: &DatasetManifest,
    e: &ManifestEntry,
    i: usize,
    spec: &SamplingConfig,
    a: &GenerateArgs,
) -> Result<ManifestEntry> {
    let src = input.resolve(&e.rgb);
    let rgb = png_io::read_png(&src)?;
    let fitted = fit_to_ladder(&rgb, &m.model.config)?;
    let raw = sample_image(m, &fitted, spec, &a.levels)?;
    let raw_rel = format!("raw/{i:06}.rawd");
    let rgb_rel = format!("rgb/{i:06}.png");
    container::write_raw(&a.out_dir.join(&raw_rel), &raw)?;
    let rgb_dst = a.out_dir.join(&rgb_rel);
    if fitted.height() == rgb.height() && fitted.width() == rgb.width() {
        fs::copy(&src, &rgb_dst).map_err(|err| Error::io(&rgb_dst, err))?;
    } else {
        log::warn!(
            "{}: cropped {}x{} to {}x{} to fit the network",
            e.rgb,
            rgb.height(),
            rgb.width(),
            fitted.height(),
            fitted.width()
        );
        png_io::write_png(&rgb_dst, &fitted)?;
    }
    for ann in &e.annotations {
        let dst = a.out_dir.join(ann);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        fs::copy(input.resolve(ann), &dst).map_err(|err| Error::io(&dst, err))?;
    }
    Ok(ManifestEntry {
        rgb: rgb_rel,
        raw: Some(raw_rel),
        isp: None,
        annotations: e.annotations.clone(),
    })
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let images = load_eval_images(&manifest)?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| default_run_dir("eval"));
    let report = match &a.checkpoint {
        Some(path) if !a.oracle => {
            let m = load_model(path)?;
            let schedule = m.config.diffusion.build()?;
            let spec = a.sampler.resolve(&m.config.sampling);
            let grid = a.grid.unwrap_or(m.config.evaluation.grid);
            let den = ModelDenoiser {
                model: &m.model,
                params: &m.params,
                schedule: &schedule,
            };
            patch_grid_eval(&Generator::Model(den), &images, &schedule, &spec, grid, a.sampler.seed)?
        }
        _ => {
            let cfg = RunConfig::default();
            let schedule = cfg.diffusion.build()?;
            let spec = a.sampler.resolve(&SamplingConfig {
                sampler: SamplerKind::Ddim,
                steps: 6,
                seed: 0,
            });
            let grid = a.grid.unwrap_or(cfg.evaluation.grid);
            patch_grid_eval(&Generator::Oracle, &images, &schedule, &spec, grid, a.sampler.seed)?
        }
    };
    let path = report.write(&out_dir)?;
    println!(
        "{}: {} patches, PSNR {} dB, SSIM {}",
        path.display(),
        report.n_patches,
        report.psnr_mean.map_or("inf".into(), |v| format!("{v:.3}")),
        report.ssim_mean.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}
