//! Reverse-process sampling of RAW packs conditioned on RGB.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use rawdiff_tensor::{Graph, Tensor};

use crate::config::{SamplerKind, SamplingConfig};
use crate::error::{bail, Result};
use crate::nn::{Binding, ParamStore};
use crate::schedule::{ddim_step, ddpm_step, make_ddim_timesteps, x0_from_eps, VarianceSchedule};
use crate::unet::{PredictionTarget, RawDiffusionModel};

/// Anything that predicts `x0` for a batch at one timestep.
pub trait Denoiser {
    /// `x_t: [N, 4, h, w]`, `rgb: [N, 3, 2h, 2w]` → `x0_hat: [N, 4, h, w]`.
    fn predict_x0(&self, x_t: &Tensor<f32>, rgb: &Tensor<f32>, t: usize) -> Result<Tensor<f32>>;
}

/// A trained model with its parameters and schedule.
pub struct ModelDenoiser<'a> {
    pub model: &'a RawDiffusionModel,
    pub params: &'a ParamStore<f32>,
    pub schedule: &'a VarianceSchedule,
}

impl Denoiser for ModelDenoiser<'_> {
    fn predict_x0(&self, x_t: &Tensor<f32>, rgb: &Tensor<f32>, t: usize) -> Result<Tensor<f32>> {
        let g = Graph::inference();
        let p = Binding::new(&g, self.params);
        let n = x_t.shape()[0];
        let out = self
            .model
            .forward(&p, g.constant(x_t.clone()), g.constant(rgb.clone()), &vec![t; n])?
            .value();
        let out = (*out).clone();
        match self.model.config.prediction_target {
            PredictionTarget::X0 => Ok(out),
            PredictionTarget::Noise => {
                let x0 = x0_from_eps(x_t.data(), out.data(), t, self.schedule)?;
                Ok(Tensor::from_vec(x_t.shape(), x0))
            }
        }
    }
}

/// Test double returning fixed clean samples regardless of input.
pub struct OracleDenoiser {
    pub x0: Tensor<f32>,
}

impl Denoiser for OracleDenoiser {
    fn predict_x0(&self, x_t: &Tensor<f32>, _rgb: &Tensor<f32>, _t: usize) -> Result<Tensor<f32>> {
        if x_t.shape() != self.x0.shape() {
            bail!(InvalidArgument, "oracle holds {:?}, asked for {:?}", self.x0.shape(), x_t.shape());
        }
        Ok(self.x0.clone())
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// `[N, 4, h, w]` in `[-1, 1]`.
    pub raw: Tensor<f32>,
    /// Number of denoiser evaluations.
    pub model_calls: usize,
}

/// Samples RAW packs for `rgb: [N, 3, 2h, 2w]`. The starting noise and any
/// ancestral noise come from `ChaCha8Rng::seed_from_u64(spec.seed)`.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    rgb: &Tensor<f32>,
    schedule: &VarianceSchedule,
    spec: &SamplingConfig,
) -> Result<SampleOutput> {
    spec.validate(schedule.len())?;
    let s = rgb.shape();
    if s.len() != 4 || s[1] != 3 || s[2] % 2 != 0 || s[3] % 2 != 0 {
        bail!(InvalidArgument, "RGB batch must be [N, 3, H, W] with even H, W; got {s:?}");
    }
    let shape = [s[0], 4, s[2] / 2, s[3] / 2];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n: usize = shape.iter().product();
    let mut x: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut calls = 0;
    match spec.sampler {
        SamplerKind::Ddpm => {
            for t in (1..=schedule.len()).rev() {
                let x0 = denoiser.predict_x0(&Tensor::from_vec(&shape, x.clone()), rgb, t)?;
                calls += 1;
                x = ddpm_step(&x, x0.data(), t, schedule, &mut rng)?;
            }
        }
        SamplerKind::Ddim => {
            let ts = make_ddim_timesteps(schedule.len(), spec.steps)?;
            for (i, &t) in ts.iter().enumerate() {
                let t_prev = ts.get(i + 1).copied().unwrap_or(0);
                let x0 = denoiser.predict_x0(&Tensor::from_vec(&shape, x.clone()), rgb, t)?;
                calls += 1;
                x = ddim_step(&x, x0.data(), t, t_prev, schedule)?;
            }
        }
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(SampleOutput {
        raw: Tensor::from_vec(&shape, x),
        model_calls: calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_linear_schedule;

    fn oracle() -> (OracleDenoiser, Tensor<f32>) {
        let x0 = Tensor::from_vec(&[1, 4, 2, 2], (0..16).map(|i| i as f32 / 8.0 - 1.0).collect());
        (OracleDenoiser { x0: x0.clone() }, x0)
    }

    #[test]
    fn ddim_six_calls_and_oracle_recovery() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let (d, x0) = oracle();
        let rgb = Tensor::zeros(&[1, 3, 4, 4]);
        let spec = SamplingConfig { sampler: SamplerKind::Ddim, steps: 6, seed: 3 };
        let out = sample(&d, &rgb, &s, &spec).unwrap();
        assert_eq!(out.model_calls, 6);
        for (a, b) in out.raw.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ddpm_is_seeded() {
        let s = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let (d, x0) = oracle();
        let rgb = Tensor::zeros(&[1, 3, 4, 4]);
        let spec = SamplingConfig { sampler: SamplerKind::Ddpm, steps: 50, seed: 9 };
        let a = sample(&d, &rgb, &s, &spec).unwrap();
        let b = sample(&d, &rgb, &s, &spec).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.model_calls, 50);
        assert_eq!(a.raw, x0);
    }

    #[test]
    fn zero_steps_rejected() {
        let s = make_linear_schedule(50, 1e-4, 0.02).unwrap();
        let (d, _) = oracle();
        let spec = SamplingConfig { sampler: SamplerKind::Ddim, steps: 0, seed: 0 };
        assert!(sample(&d, &Tensor::zeros(&[1, 3, 4, 4]), &s, &spec).is_err());
    }
}
