//! Patch-grid evaluation.
//!
//! Each RAW pack of `h x w` is cut into a `g x g` grid of cells of
//! `floor(h/g) x floor(w/g)` anchored at the top-left (remainder rows and
//! columns are dropped). All cells of an image are generated in one batch,
//! conditioned on the matching RGB cells, and compared with the ground
//! truth on `[0, 1]`-renormalized RAW. Images whose cells do not fit the
//! network ladder or the SSIM window are skipped with a warning.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rawdiff_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{SamplerKind, SamplingConfig};
use crate::error::{bail, Error, Result};
use crate::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::raw::synth::derive_seed;
use crate::raw::{container, png_io, DatasetManifest, Planes, RawImage, RgbImage};
use crate::sampling::{sample, Denoiser, ModelDenoiser, OracleDenoiser};
use crate::schedule::VarianceSchedule;
use crate::unet::ModelConfig;

/// What produces the RAW cells.
pub enum Generator<'a> {
    Model(ModelDenoiser<'a>),
    /// Returns the ground truth (upper-bound check).
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub image: String,
    pub row: usize,
    pub col: usize,
    /// `None` for identical patches (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image: String,
    pub cell_height: usize,
    pub cell_width: usize,
    pub psnr_mean: Option<f64>,
    pub ssim_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sampler: SamplerKind,
    pub sampler_steps: usize,
    pub seed: u64,
    pub grid: usize,
    pub n_images: usize,
    pub n_patches: usize,
    pub skipped_images: Vec<String>,
    /// Mean and population std over finite per-patch PSNR values.
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    /// Patches with infinite PSNR, excluded from the PSNR aggregates.
    pub psnr_infinite: usize,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    /// Total denoiser evaluations.
    pub model_calls: usize,
    pub images: Vec<ImageReport>,
    pub patches: Vec<PatchRecord>,
}

pub const REPORT_FILE: &str = "eval_report.json";
pub const PATCH_TABLE_FILE: &str = "eval_patches.csv";

/// One evaluation image: RAW pack plus its RGB.
#[derive(Clone, Debug)]
pub struct EvalImage {
    pub name: String,
    pub raw: RawImage,
    pub rgb: RgbImage,
}

pub fn load_eval_images(manifest: &DatasetManifest) -> Result<Vec<EvalImage>> {
    manifest.require_pairs()?;
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(EvalImage {
                name: e.rgb.clone(),
                raw: container::read_raw(&manifest.resolve(e.raw.as_deref().expect("pairs checked")))?,
                rgb: png_io::read_png(&manifest.resolve(&e.rgb))?,
            })
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Why an image cannot be evaluated with cells of `ch x cw`, if it cannot.
fn cell_problem(model: Option<&ModelConfig>, ch: usize, cw: usize) -> Option<String> {
    if ch < SSIM_WINDOW || cw < SSIM_WINDOW {
        return Some(format!("cell {ch}x{cw} is smaller than the SSIM window"));
    }
    model.and_then(|m| m.check_input(ch, cw).err().map(|e| e.to_string()))
}

/// Evaluates on a `grid x grid` layout. Image `i` samples with seed
/// `derive_seed(seed, i)`.
pub fn patch_grid_eval(
    generator: &Generator<'_>,
    images: &[EvalImage],
    schedule: &VarianceSchedule,
    sampling: &SamplingConfig,
    grid: usize,
    seed: u64,
) -> Result<EvalReport> {
    if grid == 0 {
        bail!(InvalidArgument, "grid must be at least 1");
    }
    sampling.validate(schedule.len())?;
    let model_cfg = match generator {
        Generator::Model(m) => Some(&m.model.config),
        Generator::Oracle => None,
    };
    let mut report = EvalReport {
        sampler: sampling.sampler,
        sampler_steps: sampling.steps,
        seed,
        grid,
        n_images: 0,
        n_patches: 0,
        skipped_images: Vec::new(),
        psnr_mean: None,
        psnr_std: None,
        psnr_infinite: 0,
        ssim_mean: None,
        ssim_std: None,
        model_calls: 0,
        images: Vec::new(),
        patches: Vec::new(),
    };
    for (idx, img) in images.iter().enumerate() {
        let (h, w) = (img.raw.height(), img.raw.width());
        if img.rgb.height() != 2 * h || img.rgb.width() != 2 * w {
            bail!(Data, "{}: RGB is not twice the RAW pack size", img.name);
        }
        let (ch, cw) = (h / grid, w / grid);
        if let Some(why) = cell_problem(model_cfg, ch, cw) {
            log::warn!("skipping {}: {why}", img.name);
            report.skipped_images.push(img.name.clone());
            continue;
        }
        let gt_n = Planes::from_vec(4, h, w, img.raw.normalize())?;
        let rgb_n = Planes::from_vec(3, 2 * h, 2 * w, img.rgb.normalize())?;
        let mut gt_cells = Vec::new();
        let mut rgb_cells = Vec::new();
        for r in 0..grid {
            for c in 0..grid {
                let g = gt_n.crop(r * ch, c * cw, ch, cw)?;
                let x = rgb_n.crop(2 * r * ch, 2 * c * cw, 2 * ch, 2 * cw)?;
                gt_cells.push(Tensor::from_vec(&[1, 4, ch, cw], g.to_f32()));
                rgb_cells.push(Tensor::from_vec(&[1, 3, 2 * ch, 2 * cw], x.to_f32()));
            }
        }
        let gt = Tensor::stack_batch(&gt_cells);
        let rgb = Tensor::stack_batch(&rgb_cells);
        let spec = SamplingConfig {
            seed: derive_seed(seed, idx as u64),
            ..*sampling
        };
        let out = match generator {
            Generator::Model(d) => sample(d as &dyn Denoiser, &rgb, schedule, &spec)?,
            Generator::Oracle => sample(&OracleDenoiser { x0: gt.clone() }, &rgb, schedule, &spec)?,
        };
        report.model_calls += out.model_calls;
        let per = 4 * ch * cw;
        let mut img_psnr = Vec::new();
        let mut img_ssim = Vec::new();
        for k in 0..grid * grid {
            let to01 = |t: &Tensor<f32>| -> Vec<f64> {
                t.data()[k * per..(k + 1) * per].iter().map(|&v| (v as f64 + 1.0) / 2.0).collect()
            };
            let (pred, truth) = (to01(&out.raw), to01(&gt));
            let p = psnr(&pred, &truth)?;
            let s = ssim(&Planes::from_vec(4, ch, cw, pred)?, &Planes::from_vec(4, ch, cw, truth)?)?;
            let finite = p.is_finite().then_some(p);
            if finite.is_none() {
                report.psnr_infinite += 1;
            } else {
                img_psnr.push(p);
            }
            img_ssim.push(s);
            report.patches.push(PatchRecord {
                image: img.name.clone(),
                row: k / grid,
                col: k % grid,
                psnr_db: finite,
                ssim: s,
            });
        }
        report.images.push(ImageReport {
            image: img.name.clone(),
            cell_height: ch,
            cell_width: cw,
            psnr_mean: (!img_psnr.is_empty()).then(|| mean_std(&img_psnr).0),
            ssim_mean: mean_std(&img_ssim).0,
        });
        report.n_images += 1;
    }
    report.n_patches = report.patches.len();
    if report.psnr_infinite > 0 {
        log::warn!("{} patches have infinite PSNR and are excluded from the PSNR mean", report.psnr_infinite);
    }
    let finite: Vec<f64> = report.patches.iter().filter_map(|p| p.psnr_db).collect();
    if !finite.is_empty() {
        let (m, s) = mean_std(&finite);
        report.psnr_mean = Some(m);
        report.psnr_std = Some(s);
    }
    let ssims: Vec<f64> = report.patches.iter().map(|p| p.ssim).collect();
    if !ssims.is_empty() {
        let (m, s) = mean_std(&ssims);
        report.ssim_mean = Some(m);
        report.ssim_std = Some(s);
    }
    Ok(report)
}

impl EvalReport {
    /// Per-patch table: `image,row,col,psnr_db,ssim` (`inf` for identical).
    pub fn patch_table(&self) -> String {
        let mut s = String::from("image,row,col,psnr_db,ssim\n");
        for p in &self.patches {
            let ps = p.psnr_db.map_or("inf".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", p.image, p.row, p.col, ps, p.ssim);
        }
        s
    }

    /// Writes the JSON report and the per-patch table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = dir.join(REPORT_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&file, json).map_err(|e| Error::io(&file, e))?;
        let table = dir.join(PATCH_TABLE_FILE);
        fs::write(&table, self.patch_table()).map_err(|e| Error::io(&table, e))?;
        Ok(file)
    }
}
