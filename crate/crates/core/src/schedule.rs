//! Variance schedule, closed-form forward process and the DDPM / DDIM reverse
//! updates for a denoiser that predicts the clean sample.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`, with `alpha_bar(0) = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use rawdiff_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Linear-schedule hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl DiffusionConfig {
    pub fn build(&self) -> Result<VarianceSchedule> {
        make_linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Index `t` holds `ᾱ_t`; index 0 is 1.
    alpha_bars: Vec<f64>,
    posterior: PosteriorCoeffs,
}

/// Coefficients of the DDPM posterior `q(x_{t-1} | x_t, x_0)`:
/// mean `c_x0(t)·x0 + c_xt(t)·x_t`, standard deviation `sigma(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorCoeffs {
    c_x0: Vec<f64>,
    c_xt: Vec<f64>,
    sigma: Vec<f64>,
}

impl PosteriorCoeffs {
    pub fn c_x0(&self, t: usize) -> f64 {
        self.c_x0[t - 1]
    }

    pub fn c_xt(&self, t: usize) -> f64 {
        self.c_xt[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }
}

/// `β_t = β_1 + (t-1)/(T-1)·(β_T - β_1)` for `t = 1..=T`.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<VarianceSchedule> {
    if steps < 2 {
        bail!(Config, "diffusion needs at least 2 steps, got {steps}");
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        bail!(Config, "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}");
    }
    let denom = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if i == steps - 1 {
                beta_end
            } else {
                beta_start + i as f64 / denom * (beta_end - beta_start)
            }
        })
        .collect();
    VarianceSchedule::from_betas(betas)
}

impl VarianceSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            bail!(Config, "every beta must lie in (0, 1)");
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        let n = betas.len();
        let mut c_x0 = Vec::with_capacity(n);
        let mut c_xt = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for t in 1..=n {
            if t == 1 {
                c_x0.push(1.0);
                c_xt.push(0.0);
                sigma.push(0.0);
                continue;
            }
            let (ab, ab_prev, beta) = (alpha_bars[t], alpha_bars[t - 1], betas[t - 1]);
            c_x0.push(ab_prev.sqrt() * beta / (1.0 - ab));
            c_xt.push(alphas[t - 1].sqrt() * (1.0 - ab_prev) / (1.0 - ab));
            sigma.push(((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt());
        }
        Ok(VarianceSchedule {
            betas,
            alphas,
            alpha_bars,
            posterior: PosteriorCoeffs { c_x0, c_xt, sigma },
        })
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior(&self) -> &PosteriorCoeffs {
        &self.posterior
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            bail!(InvalidArgument, "timestep {t} outside 1..={}", self.len());
        }
        Ok(())
    }
}

fn check_shapes(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        bail!(InvalidArgument, "{what}: length {a} does not match {b}");
    }
    Ok(())
}

fn clip_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

/// Closed-form forward sample `√ᾱ_t·x0 + √(1-ᾱ_t)·ε`.
pub fn q_sample<T: Scalar>(x0: &[T], t: usize, eps: &[T], s: &VarianceSchedule) -> Result<Vec<T>> {
    s.check_t(t)?;
    check_shapes(x0.len(), eps.len(), "q_sample")?;
    let a = T::from_f64_lossy(s.alpha_bar(t).sqrt());
    let b = T::from_f64_lossy((1.0 - s.alpha_bar(t)).sqrt());
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Clean-sample estimate recovered from a noise prediction.
pub fn x0_from_eps<T: Scalar>(xt: &[T], eps_hat: &[T], t: usize, s: &VarianceSchedule) -> Result<Vec<T>> {
    s.check_t(t)?;
    check_shapes(xt.len(), eps_hat.len(), "x0_from_eps")?;
    let ab = s.alpha_bar(t);
    let a = T::from_f64_lossy(1.0 / ab.sqrt());
    let b = T::from_f64_lossy((1.0 - ab).sqrt());
    Ok(xt.iter().zip(eps_hat).map(|(&x, &e)| (x - b * e) * a).collect())
}

/// One ancestral DDPM step from `x_t` to `x_{t-1}`; `x0_hat` is clipped to
/// `[-1, 1]`. At `t = 1` the result is the clipped `x0_hat` itself.
pub fn ddpm_step<T: Scalar, R: Rng + ?Sized>(
    xt: &[T],
    x0_hat: &[T],
    t: usize,
    s: &VarianceSchedule,
    rng: &mut R,
) -> Result<Vec<T>> {
    s.check_t(t)?;
    check_shapes(xt.len(), x0_hat.len(), "ddpm_step")?;
    let p = s.posterior();
    if t == 1 {
        return Ok(x0_hat.iter().map(|&v| clip_unit(v)).collect());
    }
    let c0 = T::from_f64_lossy(p.c_x0(t));
    let ct = T::from_f64_lossy(p.c_xt(t));
    let sigma = p.sigma(t);
    Ok(xt
        .iter()
        .zip(x0_hat)
        .map(|(&x, &x0)| {
            let z: f64 = rng.sample(StandardNormal);
            c0 * clip_unit(x0) + ct * x + T::from_f64_lossy(sigma * z)
        })
        .collect())
}

/// Posterior mean only (the noise-free part of [`ddpm_step`]).
pub fn posterior_mean<T: Scalar>(xt: &[T], x0_hat: &[T], t: usize, s: &VarianceSchedule) -> Result<Vec<T>> {
    s.check_t(t)?;
    check_shapes(xt.len(), x0_hat.len(), "posterior_mean")?;
    let c0 = T::from_f64_lossy(s.posterior().c_x0(t));
    let ct = T::from_f64_lossy(s.posterior().c_xt(t));
    Ok(xt.iter().zip(x0_hat).map(|(&x, &x0)| c0 * clip_unit(x0) + ct * x).collect())
}

/// Deterministic DDIM update (η = 0) from `t` to `t_prev < t`.
pub fn ddim_step<T: Scalar>(xt: &[T], x0_hat: &[T], t: usize, t_prev: usize, s: &VarianceSchedule) -> Result<Vec<T>> {
    if t > s.len() {
        bail!(InvalidArgument, "timestep {t} outside 1..={}", s.len());
    }
    if t_prev >= t {
        bail!(InvalidArgument, "DDIM needs t_prev < t, got {t_prev} >= {t}");
    }
    check_shapes(xt.len(), x0_hat.len(), "ddim_step")?;
    let ab = s.alpha_bar(t);
    if 1.0 - ab <= 0.0 {
        bail!(Numeric, "1 - alpha_bar({t}) is zero");
    }
    let ab_prev = s.alpha_bar(t_prev);
    let sa = T::from_f64_lossy(ab.sqrt());
    let inv_sn = T::from_f64_lossy(1.0 / (1.0 - ab).sqrt());
    let sa_prev = T::from_f64_lossy(ab_prev.sqrt());
    let sn_prev = T::from_f64_lossy((1.0 - ab_prev).sqrt());
    Ok(xt
        .iter()
        .zip(x0_hat)
        .map(|(&x, &x0)| {
            let x0 = clip_unit(x0);
            let eps = (x - sa * x0) * inv_sn;
            sa_prev * x0 + sn_prev * eps
        })
        .collect())
}

/// `S` strictly decreasing timesteps on a uniform grid from `T` down to 1:
/// `t_i = T - round(i·(T-1)/(S-1))` for `i = 0..S` (round half up); `S = 1`
/// gives `[T]`. The sampler hops from the last entry to 0.
pub fn make_ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        bail!(InvalidArgument, "DDIM step count {steps} must be in 1..={total}");
    }
    if steps == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as u128;
    let div = (steps - 1) as u128;
    Ok((0..steps as u128)
        .map(|i| total - ((2 * i * span + div) / (2 * div)) as usize)
        .collect())
}
