//! Training loss: `MSE + L1 + logL1`, each term optional.

use rawdiff_tensor::{Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub use_mse: bool,
    pub use_l1: bool,
    pub use_logl1: bool,
    /// Stability constant inside the logarithm, in `[0, 1]` units.
    pub log_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_mse: true,
            use_l1: true,
            use_logl1: true,
            log_eps: 1e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_eps.is_finite() && self.log_eps > 0.0) {
            bail!(Config, "loss.log_eps must be positive, got {}", self.log_eps);
        }
        if !(self.use_mse || self.use_l1 || self.use_logl1) {
            bail!(Config, "loss: at least one of use_mse, use_l1, use_logl1 must be enabled");
        }
        Ok(())
    }
}

/// Per-term values of one loss evaluation (disabled terms are 0).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mse: f64,
    pub l1: f64,
    pub logl1: f64,
}

fn check_shapes<T: Scalar>(a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(InvalidArgument, "loss operands differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    }
    Ok(())
}

pub fn loss_mse<'g, T: Scalar>(pred: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    check_shapes(pred, target)?;
    Ok(pred.sub(target).square().mean())
}

pub fn loss_l1<'g, T: Scalar>(pred: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    check_shapes(pred, target)?;
    Ok(pred.sub(target).abs().mean())
}

/// Mean `|log(p' + eps) - log(t' + eps)|` with `x' = (x + 1) / 2`.
pub fn loss_logl1<'g, T: Scalar>(pred: Var<'g, T>, target: Var<'g, T>, log_eps: f64) -> Result<Var<'g, T>> {
    check_shapes(pred, target)?;
    let half = T::from_f64_lossy(0.5);
    let shift = T::from_f64_lossy(0.5 + log_eps);
    let lp = pred.mul_scalar(half).add_scalar(shift).ln();
    let lt = target.mul_scalar(half).add_scalar(shift).ln();
    Ok(lp.sub(lt).abs().mean())
}

fn scalar_of<T: Scalar>(v: Var<'_, T>) -> f64 {
    v.value().data()[0].to_f64().unwrap_or(f64::NAN)
}

/// Unweighted sum of the enabled terms plus the breakdown.
pub fn loss_total<'g, T: Scalar>(
    pred: Var<'g, T>,
    target: Var<'g, T>,
    cfg: &LossConfig,
) -> Result<(Var<'g, T>, LossBreakdown)> {
    cfg.validate()?;
    check_shapes(pred, target)?;
    let mut br = LossBreakdown::default();
    let mut terms = Vec::new();
    if cfg.use_mse {
        let v = loss_mse(pred, target)?;
        br.mse = scalar_of(v);
        terms.push(v);
    }
    if cfg.use_l1 {
        let v = loss_l1(pred, target)?;
        br.l1 = scalar_of(v);
        terms.push(v);
    }
    if cfg.use_logl1 {
        let v = loss_logl1(pred, target, cfg.log_eps)?;
        br.logl1 = scalar_of(v);
        terms.push(v);
    }
    let total = terms[1..].iter().fold(terms[0], |acc, &t| acc.add(t));
    br.total = scalar_of(total);
    Ok((total, br))
}
