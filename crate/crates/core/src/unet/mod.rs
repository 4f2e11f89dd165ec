//! The RGB-guided denoising U-Net.
//!
//! Layout (RAW pack resolution `h x w`, `L` levels, widths `ch_l`):
//!
//! * `conv_in`: raw (or raw + resized RGB) → `ch_0`
//! * encoder level `l`: `n_resblocks` timestep-conditioned residual blocks,
//!   each followed by attention on attention levels; the level output is kept
//!   as the skip, then a stride-2 conv `ch_l → ch_{l+1}` (not on the last level)
//! * bottleneck: guided block, attention, guided block
//! * decoder level `l` (from `L-1` down): concat skip, `n_resblocks` guided
//!   blocks (+ attention), then nearest 2x upsample and conv `ch_l → ch_{l-1}`
//! * head: GN, SiLU, conv to 4 channels, tanh
//!
//! Parameter names follow `module/level/block/tensor`.

mod blocks;

pub use blocks::{
    guided_modulation, timestep_embedding, Attention, GuidedBlockShape, GuidedResBlock, Modulation, ResBlock,
};

use std::collections::HashMap;

use rand::Rng;
use rawdiff_tensor::{PadMode, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::guidance::{downsample_guidance, GuidanceConfig, GuidanceNet};
use crate::nn::{Binding, Conv2d, GroupNorm, Linear, ParamBuilder, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Tanh,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    GuidedBlocks,
    ConcatRgb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    #[default]
    X0,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_resblocks: usize,
    pub base_features: usize,
    pub feature_expansion: Vec<usize>,
    pub norm_groups: usize,
    /// Feature-map sides (at `reference_raw_size` input) that carry attention.
    pub attention_resolutions: Vec<usize>,
    /// RAW pack side the attention resolutions refer to.
    pub reference_raw_size: usize,
    pub raw_channels: usize,
    pub guidance: GuidanceConfig,
    /// Width of the shared convolution in each modulation.
    pub modulation_hidden: usize,
    /// Defaults to `4 * base_features`.
    pub time_embed_dim: Option<usize>,
    pub output_activation: OutputActivation,
    pub conditioning: Conditioning,
    pub prediction_target: PredictionTarget,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_resblocks: 2,
            base_features: 32,
            feature_expansion: vec![1, 1, 2, 2, 4, 4],
            norm_groups: 8,
            attention_resolutions: vec![16, 8],
            reference_raw_size: 128,
            raw_channels: 4,
            guidance: GuidanceConfig::default(),
            modulation_hidden: 128,
            time_embed_dim: None,
            output_activation: OutputActivation::Tanh,
            conditioning: Conditioning::GuidedBlocks,
            prediction_target: PredictionTarget::X0,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.feature_expansion.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_features * self.feature_expansion[level]
    }

    pub fn emb_dim(&self) -> usize {
        self.time_embed_dim.unwrap_or(4 * self.base_features)
    }

    /// Level indices carrying attention.
    pub fn attention_levels(&self) -> Vec<usize> {
        (0..self.levels())
            .filter(|&l| {
                let side = self.reference_raw_size >> l;
                self.attention_resolutions.contains(&side)
            })
            .collect()
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_expansion.is_empty() || self.feature_expansion.contains(&0) {
            bail!(Config, "model.feature_expansion must be a non-empty list of positive factors");
        }
        if self.levels() > 12 {
            bail!(Config, "model.feature_expansion has {} levels (at most 12)", self.levels());
        }
        if self.n_resblocks == 0 {
            bail!(Config, "model.n_resblocks must be at least 1");
        }
        if self.base_features < 2 || self.base_features % 2 != 0 {
            bail!(Config, "model.base_features must be even and at least 2");
        }
        if self.norm_groups == 0 {
            bail!(Config, "model.norm_groups must be positive");
        }
        for l in 0..self.levels() {
            if self.channels(l) % self.norm_groups != 0 {
                bail!(
                    Config,
                    "model.norm_groups = {} does not divide level {l} width {}",
                    self.norm_groups,
                    self.channels(l)
                );
            }
        }
        if self.raw_channels != 4 {
            bail!(Config, "model.raw_channels must be 4 (RGGB pack), got {}", self.raw_channels);
        }
        if self.reference_raw_size == 0 {
            bail!(Config, "model.reference_raw_size must be positive");
        }
        let ladder: Vec<usize> = (0..self.levels()).map(|l| self.reference_raw_size >> l).collect();
        for r in &self.attention_resolutions {
            if !ladder.contains(r) {
                bail!(
                    Config,
                    "model.attention_resolutions entry {r} is not on the level ladder {ladder:?}"
                );
            }
        }
        if self.emb_dim() == 0 || self.modulation_hidden == 0 {
            bail!(Config, "model.time_embed_dim and model.modulation_hidden must be positive");
        }
        self.guidance.validate()
    }

    /// Checks that a RAW pack of `h x w` fits the ladder.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            let near = |v: usize| ((v / m).max(1) * m, (v / m + 1) * m);
            let (hl, hh) = near(h);
            let (wl, wh) = near(w);
            bail!(
                InvalidArgument,
                "RAW size {h}x{w} must be divisible by {m}; nearest valid sizes are {hl} or {hh} (height) and {wl} or {wh} (width), i.e. RGB {}x{} or {}x{}",
                2 * hl,
                2 * wl,
                2 * hh,
                2 * wh
            );
        }
        if self.conditioning == Conditioning::GuidedBlocks
            && (2 * h < crate::guidance::MIN_GUIDANCE_SIDE || 2 * w < crate::guidance::MIN_GUIDANCE_SIDE)
        {
            bail!(InvalidArgument, "RGB input must be at least {0}x{0}", crate::guidance::MIN_GUIDANCE_SIDE);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLevel {
    pub blocks: Vec<ResBlock>,
    pub attn: Vec<Option<Attention>>,
    pub down: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub blocks: Vec<GuidedResBlock>,
    pub attn: Vec<Option<Attention>>,
    pub up: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct RawDiffusionModel {
    pub config: ModelConfig,
    pub guidance: Option<GuidanceNet>,
    pub time_mlp: (Linear, Linear),
    pub conv_in: Conv2d,
    pub encoder: Vec<EncoderLevel>,
    pub mid: (GuidedResBlock, Attention, GuidedResBlock),
    /// Indexed by level; run from the deepest level up.
    pub decoder: Vec<DecoderLevel>,
    pub out_norm: GroupNorm,
    pub out_conv: Conv2d,
}

/// Encoder result: deepest features and one skip per level.
pub struct EncoderOutput<'g, T: Scalar> {
    pub features: Var<'g, T>,
    pub skips: Vec<Var<'g, T>>,
}

impl RawDiffusionModel {
    /// Builds the model and initializes its parameters into `store`.
    pub fn new<T: Scalar, R: Rng>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = &mut ParamBuilder { store, rng };
        let cfg = config.clone();
        let groups = cfg.norm_groups;
        let emb = cfg.emb_dim();
        let base = cfg.base_features;
        let attn_levels = cfg.attention_levels();
        let guided = cfg.conditioning == Conditioning::GuidedBlocks;

        let guidance = guided.then(|| GuidanceNet::new(b, "guidance", &cfg.guidance));
        let time_mlp = (
            Linear::new(b, "time/linear1", base, emb),
            Linear::new(b, "time/linear2", emb, emb),
        );
        let in_ch = if guided { cfg.raw_channels } else { cfg.raw_channels + 3 };
        let conv_in = Conv2d::new(b, "conv_in", in_ch, cfg.channels(0), 3, 1, PadMode::Zeros);

        let mut encoder = Vec::new();
        for l in 0..cfg.levels() {
            let c = cfg.channels(l);
            let mut blocks = Vec::new();
            let mut attn = Vec::new();
            for i in 0..cfg.n_resblocks {
                let name = format!("encoder/level{l}/block{i}");
                blocks.push(ResBlock::new(b, &name, c, c, groups, emb));
                attn.push(attn_levels.contains(&l).then(|| Attention::new(b, &format!("{name}/attn"), c, groups)));
            }
            let down = (l + 1 < cfg.levels())
                .then(|| Conv2d::new(b, &format!("encoder/level{l}/down"), c, cfg.channels(l + 1), 3, 2, PadMode::Zeros));
            encoder.push(EncoderLevel { blocks, attn, down });
        }

        let guide_spec = guided.then_some((cfg.guidance.n_features, cfg.modulation_hidden));
        let shape = |cin: usize, cout: usize| GuidedBlockShape {
            cin,
            cout,
            groups,
            emb_dim: emb,
            guidance: guide_spec,
        };
        let deep = cfg.channels(cfg.levels() - 1);
        let mid = (
            GuidedResBlock::new(b, "mid/block0", &shape(deep, deep)),
            Attention::new(b, "mid/attn", deep, groups),
            GuidedResBlock::new(b, "mid/block1", &shape(deep, deep)),
        );

        let mut decoder = Vec::new();
        for l in 0..cfg.levels() {
            let c = cfg.channels(l);
            let mut blocks = Vec::new();
            let mut attn = Vec::new();
            for i in 0..cfg.n_resblocks {
                let name = format!("decoder/level{l}/block{i}");
                let cin = if i == 0 { 2 * c } else { c };
                blocks.push(GuidedResBlock::new(b, &name, &shape(cin, c)));
                attn.push(attn_levels.contains(&l).then(|| Attention::new(b, &format!("{name}/attn"), c, groups)));
            }
            let up = (l > 0).then(|| Conv2d::new(b, &format!("decoder/level{l}/up"), c, cfg.channels(l - 1), 3, 1, PadMode::Zeros));
            decoder.push(DecoderLevel { blocks, attn, up });
        }

        let out_norm = GroupNorm::new(b, "out/norm", groups, cfg.channels(0));
        let out_conv = Conv2d::new(b, "out/conv", cfg.channels(0), cfg.raw_channels, 3, 1, PadMode::Zeros);
        Ok(RawDiffusionModel {
            config: cfg,
            guidance,
            time_mlp,
            conv_in,
            encoder,
            mid,
            decoder,
            out_norm,
            out_conv,
        })
    }

    /// `SiLU(MLP(sinusoid(t)))`, shape `[N, E]`, ready for the per-block
    /// projections.
    pub fn time_features<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, ts: &[usize]) -> Var<'g, T> {
        let e = p.graph().constant(timestep_embedding(ts, self.config.base_features));
        let e = self.time_mlp.0.forward(p, e).silu();
        self.time_mlp.1.forward(p, e).silu()
    }

    pub fn encoder_forward<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        x: Var<'g, T>,
        emb_act: Var<'g, T>,
    ) -> Result<EncoderOutput<'g, T>> {
        let s = x.shape();
        self.config.check_input(s[2], s[3])?;
        let mut h = self.conv_in.forward(p, x);
        let mut skips = Vec::new();
        for level in &self.encoder {
            for (blk, attn) in level.blocks.iter().zip(&level.attn) {
                h = blk.forward(p, h, emb_act);
                if let Some(a) = attn {
                    h = a.forward(p, h);
                }
            }
            skips.push(h);
            if let Some(d) = &level.down {
                h = d.forward(p, h);
            }
        }
        Ok(EncoderOutput { features: h, skips })
    }

    pub fn bottleneck_forward<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        h: Var<'g, T>,
        guides: &mut GuidePyramid<'g, T>,
        emb_act: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let s = h.shape();
        let g = guides.at(s[2], s[3])?;
        let h = self.mid.0.forward(p, h, g, emb_act);
        let h = self.mid.1.forward(p, h);
        Ok(self.mid.2.forward(p, h, g, emb_act))
    }

    pub fn decoder_forward<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        mut h: Var<'g, T>,
        skips: &[Var<'g, T>],
        guides: &mut GuidePyramid<'g, T>,
        emb_act: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        if skips.len() != self.decoder.len() {
            bail!(InvalidArgument, "decoder expects {} skips, got {}", self.decoder.len(), skips.len());
        }
        for (l, level) in self.decoder.iter().enumerate().rev() {
            let skip = skips[l];
            if skip.shape()[2..] != h.shape()[2..] {
                bail!(InvalidArgument, "skip {l} has shape {:?}, decoder features {:?}", skip.shape(), h.shape());
            }
            h = h.concat_channels(skip);
            let g = guides.at(skip.shape()[2], skip.shape()[3])?;
            for (blk, attn) in level.blocks.iter().zip(&level.attn) {
                h = blk.forward(p, h, g, emb_act);
                if let Some(a) = attn {
                    h = a.forward(p, h);
                }
            }
            if let Some(up) = &level.up {
                h = up.forward(p, h.upsample_nearest2x());
            }
        }
        let out = self.out_conv.forward(p, self.out_norm.forward(p, h).silu());
        Ok(match self.config.output_activation {
            OutputActivation::Tanh => out.tanh(),
            OutputActivation::None => out,
        })
    }

    /// Predicts `x0` (or `eps` under the noise-prediction ablation) from the
    /// noisy RAW pack `[N, 4, h, w]`, the RGB image `[N, 3, 2h, 2w]` and one
    /// timestep per item.
    pub fn forward<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        x_t: Var<'g, T>,
        rgb: Var<'g, T>,
        ts: &[usize],
    ) -> Result<Var<'g, T>> {
        self.forward_impl(p, x_t, rgb, ts, true)
    }

    /// Same network with every modulation replaced by plain group
    /// normalization (the RGB guidance is ignored).
    pub fn forward_unguided<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        x_t: Var<'g, T>,
        rgb: Var<'g, T>,
        ts: &[usize],
    ) -> Result<Var<'g, T>> {
        self.forward_impl(p, x_t, rgb, ts, false)
    }

    fn forward_impl<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        x_t: Var<'g, T>,
        rgb: Var<'g, T>,
        ts: &[usize],
        modulate: bool,
    ) -> Result<Var<'g, T>> {
        let xs = x_t.shape();
        let rs = rgb.shape();
        if xs.len() != 4 || xs[1] != self.config.raw_channels {
            bail!(InvalidArgument, "noisy RAW must be [N, {}, h, w], got {xs:?}", self.config.raw_channels);
        }
        if rs.len() != 4 || rs[1] != 3 || rs[0] != xs[0] || rs[2] != 2 * xs[2] || rs[3] != 2 * xs[3] {
            bail!(InvalidArgument, "RGB must be [N, 3, 2h, 2w] for RAW {xs:?}, got {rs:?}");
        }
        if ts.len() != xs[0] {
            bail!(InvalidArgument, "{} timesteps for a batch of {}", ts.len(), xs[0]);
        }
        self.config.check_input(xs[2], xs[3])?;
        let emb_act = self.time_features(p, ts);
        let (input, mut guides) = match &self.guidance {
            Some(net) => {
                let f = if modulate { Some(net.forward(p, rgb)?) } else { None };
                (x_t, GuidePyramid::new(f))
            }
            None => (x_t.concat_channels(rgb.resize_bilinear(xs[2], xs[3])), GuidePyramid::new(None)),
        };
        let enc = self.encoder_forward(p, input, emb_act)?;
        let h = self.bottleneck_forward(p, enc.features, &mut guides, emb_act)?;
        self.decoder_forward(p, h, &enc.skips, &mut guides, emb_act)
    }
}

/// Guidance features resized once per resolution.
pub struct GuidePyramid<'g, T: Scalar> {
    full: Option<Var<'g, T>>,
    cache: HashMap<(usize, usize), Var<'g, T>>,
}

impl<'g, T: Scalar> GuidePyramid<'g, T> {
    pub fn new(full: Option<Var<'g, T>>) -> Self {
        GuidePyramid {
            full,
            cache: HashMap::new(),
        }
    }

    pub fn at(&mut self, h: usize, w: usize) -> Result<Option<Var<'g, T>>> {
        let Some(full) = self.full else { return Ok(None) };
        if let Some(v) = self.cache.get(&(h, w)) {
            return Ok(Some(*v));
        }
        let v = downsample_guidance(full, h, w)?;
        self.cache.insert((h, w), v);
        Ok(Some(v))
    }
}
