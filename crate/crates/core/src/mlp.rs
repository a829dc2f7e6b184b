//! Scalar radial force network: a small fully-connected net mapping a
//! radius to a force magnitude, with a hand-written reverse pass that
//! yields both the input derivative and the parameter gradient in one
//! sweep.
//!
//! Parameter layout is layer-major: for each layer, weights row-major
//! (out x in), then the bias vector when that layer carries one. The
//! last layer never has a bias. LeakyReLU acts on hidden layers only;
//! inputs exactly at a pre-activation kink take the positive-side
//! derivative.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub leaky_slope: f64,
    pub bias_mask: Vec<bool>,
}

impl MlpSpec {
    /// Scalar-in scalar-out network with the given hidden widths.
    pub fn scalar_net(hidden: &[usize], leaky_slope: f64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden layer widths must be non-empty and positive".into(),
            ));
        }
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(1);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let n_layers = layer_sizes.len() - 1;
        let mut bias_mask = vec![true; n_layers];
        bias_mask[n_layers - 1] = false;
        Ok(Self {
            layer_sizes,
            leaky_slope,
            bias_mask,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count: sum of n_in*n_out plus biased widths.
    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                let w = self.layer_sizes[l] * self.layer_sizes[l + 1];
                let b = if self.bias_mask[l] {
                    self.layer_sizes[l + 1]
                } else {
                    0
                };
                w + b
            })
            .sum()
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn init_weights<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                theta.push(rng.random_range(-bound..bound));
            }
            if self.bias_mask[l] {
                theta.resize(theta.len() + n_out, 0.0);
            }
        }
        theta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if theta.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

#[inline]
fn lrelu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

#[inline]
fn lrelu_deriv(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Scratch buffers for forward/backward sweeps, reusable across calls.
#[derive(Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

fn forward_pass(spec: &MlpSpec, theta: &[f64], r: f64, scratch: &mut MlpScratch) -> f64 {
    let n_layers = spec.n_layers();
    scratch.acts.resize(n_layers + 1, Vec::new());
    scratch.pre.resize(n_layers, Vec::new());
    scratch.acts[0].clear();
    scratch.acts[0].push(r);
    let mut off = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let w = &theta[off..off + n_in * n_out];
        off += n_in * n_out;
        let b = if spec.bias_mask[l] {
            let b = &theta[off..off + n_out];
            off += n_out;
            Some(b)
        } else {
            None
        };
        let last = l == n_layers - 1;
        let (head, tail) = scratch.acts.split_at_mut(l + 1);
        let input = &head[l];
        let pre = &mut scratch.pre[l];
        pre.clear();
        let out = &mut tail[0];
        out.clear();
        for o in 0..n_out {
            let mut z = b.map_or(0.0, |b| b[o]);
            let row = &w[o * n_in..(o + 1) * n_in];
            for (wi, ai) in row.iter().zip(input.iter()) {
                z += wi * ai;
            }
            pre.push(z);
            out.push(if last { z } else { lrelu(z, spec.leaky_slope) });
        }
    }
    scratch.acts[n_layers][0]
}

/// Forward evaluation of the scalar network.
pub fn mlp_forward(spec: &MlpSpec, theta: &[f64], r: f64) -> Result<f64> {
    spec.check_theta(theta)?;
    let mut scratch = MlpScratch::default();
    Ok(forward_pass(spec, theta, r, &mut scratch))
}

/// Value plus input derivative via a forward-mode sweep. Cheaper than the
/// full reverse pass when the parameter gradient is not needed.
pub(crate) fn mlp_value_and_dr(spec: &MlpSpec, theta: &[f64], r: f64) -> Result<(f64, f64)> {
    spec.check_theta(theta)?;
    let n_layers = spec.n_layers();
    let mut val = vec![r];
    let mut tan = vec![1.0];
    let mut off = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let w = &theta[off..off + n_in * n_out];
        off += n_in * n_out;
        let b = if spec.bias_mask[l] {
            let b = &theta[off..off + n_out];
            off += n_out;
            Some(b)
        } else {
            None
        };
        let last = l == n_layers - 1;
        let mut nval = Vec::with_capacity(n_out);
        let mut ntan = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut z = b.map_or(0.0, |b| b[o]);
            let mut dz = 0.0;
            for ((wi, vi), ti) in row.iter().zip(&val).zip(&tan) {
                z += wi * vi;
                dz += wi * ti;
            }
            if last {
                nval.push(z);
                ntan.push(dz);
            } else {
                nval.push(lrelu(z, spec.leaky_slope));
                ntan.push(lrelu_deriv(z, spec.leaky_slope) * dz);
            }
        }
        val = nval;
        tan = ntan;
    }
    Ok((val[0], tan[0]))
}

/// Full reverse pass writing dF/dtheta into `grad_theta` and returning
/// (value, dF/dr). `grad_theta` must have the spec's parameter count.
pub(crate) fn mlp_full_into(
    spec: &MlpSpec,
    theta: &[f64],
    r: f64,
    scratch: &mut MlpScratch,
    grad_theta: &mut [f64],
) -> Result<(f64, f64)> {
    spec.check_theta(theta)?;
    if grad_theta.len() != theta.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            got: grad_theta.len(),
        });
    }
    let value = forward_pass(spec, theta, r, scratch);
    let n_layers = spec.n_layers();

    // Backward: delta holds dF/d(pre-activation of current layer).
    scratch.delta.clear();
    scratch.delta.push(1.0);
    let mut layer_offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        layer_offsets.push(off);
        off += spec.layer_sizes[l] * spec.layer_sizes[l + 1];
        if spec.bias_mask[l] {
            off += spec.layer_sizes[l + 1];
        }
    }

    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let w_off = layer_offsets[l];
        let w = &theta[w_off..w_off + n_in * n_out];
        let input = &scratch.acts[l];
        let delta = &scratch.delta;

        let g = &mut grad_theta[w_off..w_off + n_in * n_out];
        for o in 0..n_out {
            let d = delta[o];
            let row = &mut g[o * n_in..(o + 1) * n_in];
            for (gi, ai) in row.iter_mut().zip(input.iter()) {
                *gi = d * ai;
            }
        }
        if spec.bias_mask[l] {
            let b_off = w_off + n_in * n_out;
            grad_theta[b_off..b_off + n_out].copy_from_slice(delta);
        }

        // Propagate to the previous layer's pre-activations.
        scratch.delta_next.clear();
        scratch.delta_next.resize(n_in, 0.0);
        for o in 0..n_out {
            let d = delta[o];
            let row = &w[o * n_in..(o + 1) * n_in];
            for (nd, wi) in scratch.delta_next.iter_mut().zip(row) {
                *nd += d * wi;
            }
        }
        if l > 0 {
            let pre_prev = &scratch.pre[l - 1];
            for (nd, z) in scratch.delta_next.iter_mut().zip(pre_prev) {
                *nd *= lrelu_deriv(*z, spec.leaky_slope);
            }
        }
        std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
    }
    let dr = scratch.delta[0];
    Ok((value, dr))
}

/// Both gradients from one reverse pass: dF/dr and dF/dtheta.
pub fn mlp_grads(spec: &MlpSpec, theta: &[f64], r: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; spec.param_count()];
    let mut scratch = MlpScratch::default();
    let (_, dr) = mlp_full_into(spec, theta, r, &mut scratch, &mut grad)?;
    Ok((dr, grad))
}
