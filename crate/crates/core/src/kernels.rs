//! Rational-quadratic kernel on flattened trajectory fragments.
//!
//! k(x, y) = (1 + ||x - y||^2 / (2 a l^2))^(-a) with decay exponent `a`
//! and characteristic scale `l`. The kernel is characteristic, so the
//! induced two-sample distance separates distributions. Hyperparameters
//! stay fixed during training; nothing downstream differentiates through
//! them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub alpha: f64,
    pub length_scale: f64,
}

impl KernelConfig {
    pub fn new(alpha: f64, length_scale: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel alpha must be positive, got {alpha}"
            )));
        }
        if !length_scale.is_finite() || length_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "kernel length_scale must be positive, got {length_scale}"
            )));
        }
        Ok(Self {
            alpha,
            length_scale,
        })
    }
}

impl Default for KernelConfig {
    /// Study defaults: alpha = 2, length scale = 0.01.
    fn default() -> Self {
        Self {
            alpha: 2.0,
            length_scale: 0.01,
        }
    }
}

#[inline]
fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn rqk_eval_unchecked(x: &[f64], y: &[f64], cfg: &KernelConfig) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        d2 += d * d;
    }
    let u = d2 / (2.0 * cfg.alpha * cfg.length_scale * cfg.length_scale);
    (1.0 + u).powf(-cfg.alpha)
}

/// Kernel value; symmetric in its arguments, in (0, 1].
pub fn rqk_eval(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_dims(x, y)?;
    Ok(rqk_eval_unchecked(x, y, cfg))
}

#[inline]
pub(crate) fn rqk_grad1_into(x: &[f64], y: &[f64], cfg: &KernelConfig, out: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), out.len());
    let l2 = cfg.length_scale * cfg.length_scale;
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        d2 += d * d;
    }
    let u = d2 / (2.0 * cfg.alpha * l2);
    let coef = -(1.0 + u).powf(-cfg.alpha - 1.0) / l2;
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o = coef * (a - b);
    }
}

/// Partial derivative of the kernel in its first argument.
pub fn rqk_grad1(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<Vec<f64>> {
    check_dims(x, y)?;
    let mut out = vec![0.0; x.len()];
    rqk_grad1_into(x, y, cfg, &mut out);
    Ok(out)
}

/// Partial derivative in the second argument: -grad1 by symmetry.
pub fn rqk_grad2(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<Vec<f64>> {
    let mut g = rqk_grad1(x, y, cfg)?;
    for v in &mut g {
        *v = -*v;
    }
    Ok(g)
}
