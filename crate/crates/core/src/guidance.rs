//! RGB guidance network: an EDSR-style feature extractor without an
//! upsampling head and without normalization layers.
//!
//! `lift = conv(rgb)`; each residual block is `x + conv(relu(conv(x)))`, the
//! original EDSR block (no activation after the second conv).
//! The residual chain carries `lift` through, so the output is `lift` plus
//! the summed block outputs (exactly `lift` when the blocks are zero). Every
//! convolution is 3x3 with reflective padding of one pixel.

use rand::Rng;
use rawdiff_tensor::{PadMode, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Binding, Conv2d, ParamBuilder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub n_resblocks: usize,
    pub n_features: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            n_resblocks: 4,
            n_features: 64,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_resblocks == 0 || self.n_features == 0 {
            bail!(Config, "guidance needs at least one residual block and one feature");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GuidanceNet {
    pub config: GuidanceConfig,
    pub lift: Conv2d,
    pub blocks: Vec<(Conv2d, Conv2d)>,
}

pub const MIN_GUIDANCE_SIDE: usize = 8;

impl GuidanceNet {
    pub fn new<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, prefix: &str, config: &GuidanceConfig) -> Self {
        let c = config.n_features;
        let lift = Conv2d::new(b, &format!("{prefix}/lift"), 3, c, 3, 1, PadMode::Reflect);
        let blocks = (0..config.n_resblocks)
            .map(|i| {
                let base = format!("{prefix}/body/block{i}");
                (
                    Conv2d::new(b, &format!("{base}/conv1"), c, c, 3, 1, PadMode::Reflect),
                    Conv2d::new(b, &format!("{base}/conv2"), c, c, 3, 1, PadMode::Reflect),
                )
            })
            .collect();
        GuidanceNet {
            config: config.clone(),
            lift,
            blocks,
        }
    }

    /// `rgb: [N, 3, H, W]` in `[-1, 1]` → `F_RGB: [N, C, H, W]`.
    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, rgb: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = rgb.shape();
        if shape.len() != 4 || shape[1] != 3 {
            bail!(InvalidArgument, "guidance input must be [N, 3, H, W], got {shape:?}");
        }
        if shape[2] < MIN_GUIDANCE_SIDE || shape[3] < MIN_GUIDANCE_SIDE {
            bail!(
                InvalidArgument,
                "guidance input {}x{} is smaller than {MIN_GUIDANCE_SIDE}x{MIN_GUIDANCE_SIDE}",
                shape[2],
                shape[3]
            );
        }
        let mut h = self.lift.forward(p, rgb);
        for (c1, c2) in &self.blocks {
            let r = c2.forward(p, c1.forward(p, h).relu());
            h = h.add(r);
        }
        Ok(h)
    }

    pub fn num_scalars(&self) -> usize {
        self.lift.num_scalars() + self.blocks.iter().map(|(a, b)| a.num_scalars() + b.num_scalars()).sum::<usize>()
    }
}

/// Bilinear resize of guidance features with half-pixel centres
/// (`align_corners = false`); identity when the size already matches.
pub fn downsample_guidance<'g, T: Scalar>(features: Var<'g, T>, h: usize, w: usize) -> Result<Var<'g, T>> {
    if h == 0 || w == 0 {
        bail!(InvalidArgument, "target size {h}x{w} must be at least 1x1");
    }
    if features.shape().len() != 4 {
        bail!(InvalidArgument, "guidance features must be NCHW");
    }
    Ok(features.resize_bilinear(h, w))
}
