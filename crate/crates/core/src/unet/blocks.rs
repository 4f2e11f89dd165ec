//! Building blocks of the denoiser.

use rand::Rng;
use rawdiff_tensor::{PadMode, Scalar, Tensor, Var};

use crate::error::{bail, Result};
use crate::guidance::downsample_guidance;
use crate::nn::{Binding, Conv2d, GroupNorm, Linear, ParamBuilder, NORM_EPS};

/// Sinusoidal embedding `[sin(t f_i), cos(t f_i)]`, `f_i = 10000^(-i/half)`.
pub fn timestep_embedding<T: Scalar>(ts: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Tensor::zeros(&[ts.len(), dim]);
    for (n, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * f;
            out.data_mut()[n * dim + i] = T::from_f64_lossy(a.sin());
            out.data_mut()[n * dim + half + i] = T::from_f64_lossy(a.cos());
        }
    }
    out
}

fn conv3<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, cin: usize, cout: usize) -> Conv2d {
    Conv2d::new(b, name, cin, cout, 3, 1, PadMode::Zeros)
}

fn skip_proj<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, cin: usize, cout: usize) -> Option<Conv2d> {
    (cin != cout).then(|| Conv2d::new(b, name, cin, cout, 1, 1, PadMode::Zeros))
}

/// Encoder residual block. The timestep affine acts after the second group
/// normalization: `GN2(h) * (1 + scale) + shift`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub norm1: GroupNorm,
    pub conv1: Conv2d,
    pub norm2: GroupNorm,
    pub emb_scale: Linear,
    pub emb_shift: Linear,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        emb_dim: usize,
    ) -> Self {
        ResBlock {
            norm1: GroupNorm::new(b, &format!("{name}/norm1"), groups, cin),
            conv1: conv3(b, &format!("{name}/conv1"), cin, cout),
            norm2: GroupNorm::new(b, &format!("{name}/norm2"), groups, cout),
            emb_scale: Linear::new(b, &format!("{name}/emb_scale"), emb_dim, cout),
            emb_shift: Linear::new(b, &format!("{name}/emb_shift"), emb_dim, cout),
            conv2: conv3(b, &format!("{name}/conv2"), cout, cout),
            skip: skip_proj(b, &format!("{name}/skip"), cin, cout),
        }
    }

    /// `emb_act` is `SiLU(time embedding)`, shape `[N, E]`.
    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>, emb_act: Var<'g, T>) -> Var<'g, T> {
        let h = self.conv1.forward(p, self.norm1.forward(p, x).silu());
        let scale = self.emb_scale.forward(p, emb_act).add_scalar(T::one());
        let shift = self.emb_shift.forward(p, emb_act);
        let h = self.norm2.forward(p, h).mul_channels(scale).add_channels(shift);
        let h = self.conv2.forward(p, h.silu());
        let s = match &self.skip {
            Some(c) => c.forward(p, x),
            None => x,
        };
        s.add(h)
    }
}

/// Spatially adaptive normalization:
/// `GN(x) * (1 + gamma(g)) + beta(g)`, where `g` is the guidance map already
/// resized to the resolution of `x`, and `gamma`, `beta` share one
/// convolution with ReLU.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub groups: usize,
    pub shared: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl Modulation {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        channels: usize,
        groups: usize,
        guide_channels: usize,
        hidden: usize,
    ) -> Self {
        Modulation {
            groups,
            shared: conv3(b, &format!("{name}/shared"), guide_channels, hidden),
            gamma: conv3(b, &format!("{name}/gamma"), hidden, channels),
            beta: conv3(b, &format!("{name}/beta"), hidden, channels),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>, guide: Var<'g, T>) -> Var<'g, T> {
        let a = self.shared.forward(p, guide).relu();
        let gamma = self.gamma.forward(p, a);
        let beta = self.beta.forward(p, a);
        x.group_norm(self.groups, NORM_EPS).mul(gamma.add_scalar(T::one())).add(beta)
    }
}

/// `Norm(x) * (1 + gamma(g)) + beta(g)` with the guidance features `g`
/// bilinearly resized to the feature map first. Checked entry point; the
/// network itself resizes once per resolution and calls
/// [`Modulation::forward`].
pub fn guided_modulation<'g, T: Scalar>(
    p: &Binding<'g, '_, T>,
    m: &Modulation,
    x: Var<'g, T>,
    rgb_features: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let (xs, gs) = (x.shape(), rgb_features.shape());
    if xs.len() != 4 || gs.len() != 4 || xs[0] != gs[0] {
        bail!(Config, "modulation expects NCHW features and guidance with equal batch, got {xs:?} and {gs:?}");
    }
    if xs[1] != m.gamma.cout {
        bail!(Config, "features have {} channels, modulation produces {}", xs[1], m.gamma.cout);
    }
    if gs[1] != m.shared.cin {
        bail!(Config, "guidance has {} channels, modulation expects {}", gs[1], m.shared.cin);
    }
    if xs[1] % m.groups != 0 {
        bail!(Config, "{} channels are not divisible into {} groups", xs[1], m.groups);
    }
    let g = downsample_guidance(rgb_features, xs[2], xs[3])?;
    Ok(m.forward(p, x, g))
}

/// Residual block whose two group normalizations are modulated by the RGB
/// guidance. The timestep enters additively after the first convolution.
/// Without modulation (concatenation conditioning, or the unguided
/// reference path) both normalizations are plain group norms.
#[derive(Clone, Debug)]
pub struct GuidedResBlock {
    pub groups: usize,
    pub mod1: Option<Modulation>,
    pub conv1: Conv2d,
    pub emb_proj: Linear,
    pub mod2: Option<Modulation>,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
}

pub struct GuidedBlockShape {
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub emb_dim: usize,
    /// `(guidance channels, hidden width)` when modulated.
    pub guidance: Option<(usize, usize)>,
}

impl GuidedResBlock {
    pub fn new<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, s: &GuidedBlockShape) -> Self {
        let mod1 = s
            .guidance
            .map(|(gc, hid)| Modulation::new(b, &format!("{name}/mod1"), s.cin, s.groups, gc, hid));
        let conv1 = conv3(b, &format!("{name}/conv1"), s.cin, s.cout);
        let emb_proj = Linear::new(b, &format!("{name}/emb_proj"), s.emb_dim, s.cout);
        let mod2 = s
            .guidance
            .map(|(gc, hid)| Modulation::new(b, &format!("{name}/mod2"), s.cout, s.groups, gc, hid));
        GuidedResBlock {
            groups: s.groups,
            mod1,
            conv1,
            emb_proj,
            mod2,
            conv2: conv3(b, &format!("{name}/conv2"), s.cout, s.cout),
            skip: skip_proj(b, &format!("{name}/skip"), s.cin, s.cout),
        }
    }

    fn norm<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        m: &Option<Modulation>,
        x: Var<'g, T>,
        guide: Option<Var<'g, T>>,
    ) -> Var<'g, T> {
        match (m, guide) {
            (Some(m), Some(g)) => m.forward(p, x, g),
            _ => x.group_norm(self.groups, NORM_EPS),
        }
    }

    /// `guide` is `None` to run the unmodulated counterpart.
    pub fn forward<'g, T: Scalar>(
        &self,
        p: &Binding<'g, '_, T>,
        x: Var<'g, T>,
        guide: Option<Var<'g, T>>,
        emb_act: Var<'g, T>,
    ) -> Var<'g, T> {
        let h = self.conv1.forward(p, self.norm(p, &self.mod1, x, guide).silu());
        let h = h.add_channels(self.emb_proj.forward(p, emb_act));
        let h = self.conv2.forward(p, self.norm(p, &self.mod2, h, guide).silu());
        let s = match &self.skip {
            Some(c) => c.forward(p, x),
            None => x,
        };
        s.add(h)
    }
}

/// Single-head self-attention over spatial positions with a pre-norm and a
/// residual connection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub channels: usize,
    pub norm: GroupNorm,
    pub q: Conv2d,
    pub k: Conv2d,
    pub v: Conv2d,
    pub proj: Conv2d,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, channels: usize, groups: usize) -> Self {
        let c1 = |b: &mut ParamBuilder<'_, T, R>, n: &str| Conv2d::new(b, &format!("{name}/{n}"), channels, channels, 1, 1, PadMode::Zeros);
        Attention {
            channels,
            norm: GroupNorm::new(b, &format!("{name}/norm"), groups, channels),
            q: c1(b, "q"),
            k: c1(b, "k"),
            v: c1(b, "v"),
            proj: c1(b, "proj"),
        }
    }

    /// Attention weights `[N, HW, HW]` (row `i` attends over columns `j`).
    pub fn weights<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let h = self.norm.forward(p, x);
        let q = self.q.forward(p, h).reshape(&[n, c, hw]);
        let k = self.k.forward(p, h).reshape(&[n, c, hw]);
        let v = self.v.forward(p, h).reshape(&[n, c, hw]);
        let scale = T::from_f64_lossy(1.0 / (c as f64).sqrt());
        let w = q.bmm(k, true, false).mul_scalar(scale).softmax_last();
        (w, v)
    }

    pub fn forward<'g, T: Scalar>(&self, p: &Binding<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let s = x.shape();
        let (w, v) = self.weights(p, x);
        let out = v.bmm(w, false, true).reshape(&s);
        x.add(self.proj.forward(p, out))
    }
}
