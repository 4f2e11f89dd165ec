//! Training data: loaded pairs, aligned random crops, shared dihedral
//! augmentation and dataset mixing.
//!
//! Crops and augmentations operate on the full-resolution mosaic so the RAW
//! and RGB stay pixel-aligned. A patch of `P` RGB pixels is taken as a
//! `(P + 2)`-sided crop at an even origin; the augmentation rotates/flips
//! mosaic and RGB together, and a final offset of 0 or 1 pixel per axis puts
//! a red site back at the patch origin before re-packing. Transposing
//! transforms swap the two green planes, which remain green sites.

use rand::Rng;
use rawdiff_tensor::Tensor;

use crate::error::{bail, Result};
use crate::raw::{container, pack_bayer, png_io, unpack_bayer, Cfa, DatasetManifest, Planes, RawImage, RgbImage};

/// One RAW/RGB pair at full mosaic resolution, normalized to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    /// `1 x H x W`
    pub mosaic: Planes,
    /// `3 x H x W`
    pub rgb: Planes,
}

impl TrainingPair {
    pub fn from_images(raw: &RawImage, rgb: &RgbImage) -> Result<Self> {
        if rgb.height() != 2 * raw.height() || rgb.width() != 2 * raw.width() {
            bail!(
                Data,
                "RGB {}x{} is not twice the RAW pack {}x{}",
                rgb.height(),
                rgb.width(),
                raw.height(),
                raw.width()
            );
        }
        let packed = Planes::from_vec(4, raw.height(), raw.width(), raw.normalize())?;
        Ok(TrainingPair {
            mosaic: unpack_bayer(&packed, raw.cfa)?,
            rgb: Planes::from_vec(3, rgb.height(), rgb.width(), rgb.normalize())?,
        })
    }

    pub fn height(&self) -> usize {
        self.mosaic.h
    }

    pub fn width(&self) -> usize {
        self.mosaic.w
    }
}

pub fn load_pairs(manifest: &DatasetManifest) -> Result<Vec<TrainingPair>> {
    manifest.require_pairs()?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let raw = container::read_raw(&manifest.resolve(e.raw.as_deref().expect("pairs checked")))?;
            let rgb = png_io::read_png(&manifest.resolve(&e.rgb))?;
            TrainingPair::from_images(&raw, &rgb)
        })
        .collect()
}

/// Original pairs plus an optional generated set drawn with probability
/// `p_gen`.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub original: Vec<TrainingPair>,
    pub generated: Vec<TrainingPair>,
    pub p_gen: f64,
}

impl TrainingData {
    pub fn new(original: Vec<TrainingPair>, generated: Vec<TrainingPair>, p_gen: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_gen) {
            bail!(Config, "p_gen must lie in [0, 1], got {p_gen}");
        }
        if p_gen < 1.0 && original.is_empty() {
            bail!(Data, "original dataset is empty");
        }
        if p_gen > 0.0 && generated.is_empty() {
            bail!(Data, "p_gen = {p_gen} but no generated dataset is configured");
        }
        Ok(TrainingData {
            original,
            generated,
            p_gen,
        })
    }

    /// Fails unless `patch` fits every image.
    pub fn check_patch(&self, patch: usize) -> Result<()> {
        for p in self.original.iter().chain(&self.generated) {
            if patch > p.height() || patch > p.width() {
                bail!(Data, "patch {patch} exceeds image {}x{}", p.height(), p.width());
            }
        }
        Ok(())
    }
}

/// Element of the dihedral group on square crops: rotate by `quarter_turns`
/// x 90 degrees counter-clockwise, then optional horizontal/vertical flips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct D4 {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl D4 {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        D4 {
            quarter_turns: rng.gen_range(0..4),
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
        }
    }

    /// Source coordinate of output site `(y, x)` in an `n x n` square.
    pub fn source(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let (mut y, mut x) = (y, x);
        // undo in reverse order
        if self.vflip {
            y = n - 1 - y;
        }
        if self.hflip {
            x = n - 1 - x;
        }
        for _ in 0..self.quarter_turns {
            // one counter-clockwise turn maps source (sy, sx) to (n-1-sx, sy)
            (y, x) = (x, n - 1 - y);
        }
        (y, x)
    }

    pub fn apply(self, p: &Planes) -> Planes {
        assert_eq!(p.h, p.w, "dihedral transforms need square planes");
        let n = p.h;
        let mut out = Planes::zeros(p.channels, n, n);
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = self.source(y, x, n);
                for c in 0..p.channels {
                    out.set(c, y, x, p.get(c, sy, sx));
                }
            }
        }
        out
    }

    /// Offset `(dy, dx)` in `{0, 1}^2` whose source site has even parity in
    /// both axes (a red site when the crop origin is even).
    pub fn phase_offset(self, n: usize) -> (usize, usize) {
        for dy in 0..2 {
            for dx in 0..2 {
                let (sy, sx) = self.source(dy, dx, n);
                if sy % 2 == 0 && sx % 2 == 0 {
                    return (dy, dx);
                }
            }
        }
        unreachable!("every 2x2 block holds one even-even site")
    }
}

/// One augmented patch: RAW pack `4 x P/2 x P/2`, RGB `3 x P x P`.
#[derive(Clone, Debug)]
pub struct Patch {
    pub raw: Planes,
    pub rgb: Planes,
}

/// Crops a patch with RGB origin `(y0, x0)` (both even) and applies `aug`.
/// Needs a `(P + 2)` margin unless `aug` is the identity.
pub fn crop_patch(pair: &TrainingPair, y0: usize, x0: usize, patch: usize, aug: D4) -> Result<Patch> {
    if y0 % 2 != 0 || x0 % 2 != 0 || patch % 2 != 0 {
        bail!(InvalidArgument, "crop origin ({y0}, {x0}) and patch {patch} must be even");
    }
    let (mosaic, rgb) = if aug == D4::default() {
        (
            pair.mosaic.crop(y0, x0, patch, patch)?,
            pair.rgb.crop(y0, x0, patch, patch)?,
        )
    } else {
        let big = patch + 2;
        let m = aug.apply(&pair.mosaic.crop(y0, x0, big, big)?);
        let r = aug.apply(&pair.rgb.crop(y0, x0, big, big)?);
        let (dy, dx) = aug.phase_offset(big);
        (m.crop(dy, dx, patch, patch)?, r.crop(dy, dx, patch, patch)?)
    };
    Ok(Patch {
        raw: pack_bayer(&mosaic, Cfa::Rggb)?,
        rgb,
    })
}

/// Random even-origin crop with random augmentation; images without the
/// two-pixel augmentation margin get an unaugmented crop.
pub fn random_patch<R: Rng + ?Sized>(pair: &TrainingPair, patch: usize, augment: bool, rng: &mut R) -> Result<Patch> {
    let (h, w) = (pair.height(), pair.width());
    if patch > h || patch > w {
        bail!(Data, "patch {patch} exceeds image {h}x{w}");
    }
    let margin = if augment && patch + 2 <= h && patch + 2 <= w { 2 } else { 0 };
    let y0 = 2 * rng.gen_range(0..=(h - patch - margin) / 2);
    let x0 = 2 * rng.gen_range(0..=(w - patch - margin) / 2);
    let aug = if margin > 0 { D4::random(rng) } else { D4::default() };
    crop_patch(pair, y0, x0, patch, aug)
}

#[derive(Clone, Debug)]
pub struct TrainingBatch {
    /// `[B, 4, P/2, P/2]`
    pub raw: Tensor<f32>,
    /// `[B, 3, P, P]`
    pub rgb: Tensor<f32>,
    /// Whether each item came from the generated set.
    pub from_generated: Vec<bool>,
}

/// Draws `batch` patches. Each item picks the generated set with
/// probability `p_gen`, then a uniform pair from that set.
pub fn sample_training_batch<R: Rng + ?Sized>(
    data: &TrainingData,
    batch: usize,
    patch: usize,
    augment: bool,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if batch == 0 {
        bail!(InvalidArgument, "batch size must be at least 1");
    }
    let mut raws = Vec::with_capacity(batch);
    let mut rgbs = Vec::with_capacity(batch);
    let mut from_generated = Vec::with_capacity(batch);
    for _ in 0..batch {
        let gen = rng.gen_bool(data.p_gen);
        let set = if gen { &data.generated } else { &data.original };
        let pair = &set[rng.gen_range(0..set.len())];
        let p = random_patch(pair, patch, augment, rng)?;
        raws.push(Tensor::from_vec(&[1, 4, p.raw.h, p.raw.w], p.raw.to_f32()));
        rgbs.push(Tensor::from_vec(&[1, 3, patch, patch], p.rgb.to_f32()));
        from_generated.push(gen);
    }
    Ok(TrainingBatch {
        raw: Tensor::stack_batch(&raws),
        rgb: Tensor::stack_batch(&rgbs),
        from_generated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_d4() -> Vec<D4> {
        let mut v = Vec::new();
        for quarter_turns in 0..4 {
            for hflip in [false, true] {
                for vflip in [false, true] {
                    v.push(D4 { quarter_turns, hflip, vflip });
                }
            }
        }
        v
    }

    #[test]
    fn quarter_turn_matches_hand_example() {
        // [[0, 1], [2, 3]] turned counter-clockwise is [[1, 3], [0, 2]]
        let p = Planes::from_vec(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = D4 { quarter_turns: 1, ..D4::default() }.apply(&p);
        assert_eq!(r.data, vec![1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn transforms_are_bijections() {
        let n = 5;
        for t in all_d4() {
            let mut seen = vec![false; n * n];
            for y in 0..n {
                for x in 0..n {
                    let (sy, sx) = t.source(y, x, n);
                    assert!(!seen[sy * n + sx]);
                    seen[sy * n + sx] = true;
                }
            }
        }
    }

    #[test]
    fn phase_offset_restores_red_origin() {
        for t in all_d4() {
            for n in [6, 8] {
                let (dy, dx) = t.phase_offset(n);
                for y in (dy..n - 1).step_by(2) {
                    for x in (dx..n - 1).step_by(2) {
                        let (sy, sx) = t.source(y, x, n);
                        assert_eq!((sy % 2, sx % 2), (0, 0));
                        let (by, bx) = t.source(y + 1, x + 1, n);
                        assert_eq!((by % 2, bx % 2), (1, 1), "blue diagonal for {t:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn too_large_patch_is_a_data_error() {
        let pair = TrainingPair {
            mosaic: Planes::zeros(1, 8, 8),
            rgb: Planes::zeros(3, 8, 8),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(random_patch(&pair, 10, true, &mut rng), Err(crate::Error::Data(_))));
        // exactly fitting patch falls back to no augmentation
        assert!(random_patch(&pair, 8, true, &mut rng).is_ok());
    }
}
