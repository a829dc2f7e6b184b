//! Per-sample backward recurrence for the transposed linearized system
//! of an m-step scheme, and assembly of parameter gradients from the
//! resulting cotangents.
//!
//! No dense Jacobian is ever formed: the recurrence walks slices from
//! the horizon backwards, consuming only the per-step partials, so
//! memory per sample stays O(slices x dim).

use crate::error::{Error, Result};
use crate::integrators::{
    farago_coeffs, param_vjp, seed_param_vjp, BackwardScratch, FaragoCoeffs, RADIUS_FLOOR,
};
use crate::mlp;
use crate::model::{Channel, ForceKind, GenModelParams, Trajectory};

/// Scheme order of the shipped integrator.
pub const SCHEME_ORDER: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    /// Cotangents indexed (slice, dimension), flattened slice-major.
    pub r: Vec<f64>,
    pub sample_id: usize,
}

/// Backward recurrence for a general m-step scheme. `lag_vjp(j, lag, r_j,
/// out)` must add (dPsi_{j-1}/dX_{j-lag})^T r_j into `out`, where the
/// update producing slice j exists for m <= j <= N. Lags are applied in
/// descending order so accumulation order is deterministic.
pub(crate) fn backward_recurrence<F>(
    n_slices: usize,
    dim: usize,
    m: usize,
    g_x: &[f64],
    mut lag_vjp: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, usize, &[f64], &mut [f64]) -> Result<()>,
{
    if g_x.len() != n_slices * dim {
        return Err(Error::LengthMismatch {
            expected: n_slices * dim,
            got: g_x.len(),
        });
    }
    let n = n_slices - 1;
    let mut r = g_x.to_vec();
    for k in (0..=n).rev() {
        let (head, tail) = r.split_at_mut((k + 1) * dim);
        let r_k = &mut head[k * dim..];
        for lag in (1..=m).rev() {
            let j = k + lag;
            if j >= m && j <= n {
                let r_j = &tail[(j - k - 1) * dim..(j - k) * dim];
                lag_vjp(j, lag, r_j, r_k)?;
            }
        }
        if r_k.iter().any(|v| !v.is_finite()) {
            return Err(Error::AdjointBlowup { step: k });
        }
    }
    Ok(r)
}

/// Add (dPsi/dX_{j-1})^T r into `out` for the update evaluated at state
/// `x_prev`.
fn state_vjp_into(
    p: &GenModelParams,
    coeffs: &FaragoCoeffs,
    fcoef: f64,
    x_prev: &[f64],
    r_in: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let two_b = 2.0 * coeffs.b;
    match &p.force {
        ForceKind::Linear { stiffness, .. } => {
            let s = two_b - fcoef * stiffness;
            for (o, r) in out.iter_mut().zip(r_in) {
                *o += s * r;
            }
        }
        ForceKind::DoubleWell { kappa, r0 } => {
            let r2: f64 = x_prev.iter().map(|v| v * v).sum();
            let diag = -4.0 * kappa * (r2 - r0 * r0);
            let xr: f64 = x_prev.iter().zip(r_in).map(|(a, b)| a * b).sum();
            for i in 0..out.len() {
                out[i] += two_b * r_in[i] + fcoef * (diag * r_in[i] - 8.0 * kappa * xr * x_prev[i]);
            }
        }
        ForceKind::Neural { spec, theta } => {
            let r2: f64 = x_prev.iter().map(|v| v * v).sum();
            let rad = r2.sqrt();
            if rad < RADIUS_FLOOR {
                return Err(Error::DegenerateRadius(RADIUS_FLOOR));
            }
            let (f, fp) = mlp::mlp_value_and_dr(spec, theta, rad)?;
            radial_state_vjp(two_b, fcoef, f / rad, fp, rad, x_prev, r_in, out);
        }
    }
    Ok(())
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn radial_state_vjp(
    two_b: f64,
    fcoef: f64,
    f_over_r: f64,
    fp: f64,
    rad: f64,
    x_prev: &[f64],
    r_in: &[f64],
    out: &mut [f64],
) {
    let xr: f64 = x_prev.iter().zip(r_in).map(|(a, b)| a * b).sum::<f64>() / rad;
    let aniso = (fp - f_over_r) * xr / rad;
    for i in 0..out.len() {
        out[i] += two_b * r_in[i] + fcoef * (f_over_r * r_in[i] + aniso * x_prev[i]);
    }
}

/// Solve J^T r = g_x^T backward over the trajectory.
pub fn solve_adjoint(
    traj: &Trajectory,
    p: &GenModelParams,
    g_x: &[f64],
    sample_id: usize,
) -> Result<AdjointState> {
    check_shapes(traj, p)?;
    let coeffs = farago_coeffs(p)?;
    let fcoef = coeffs.b * p.dt * p.dt / p.mass;
    let d = p.dim;
    let r = backward_recurrence(traj.n_slices(), d, SCHEME_ORDER, g_x, |j, lag, r_j, out| {
        if lag == 1 {
            state_vjp_into(p, &coeffs, fcoef, traj.slice(j - 1), r_j, out)
        } else {
            for (o, r) in out.iter_mut().zip(r_j) {
                *o -= coeffs.a * r;
            }
            Ok(())
        }
    })?;
    Ok(AdjointState { r, sample_id })
}

/// Gradient assembly: explicit term plus the contraction of the adjoint
/// against the per-step parameter partials. Seed slices contribute
/// nothing because the start-up states carry no parameter dependence.
/// Output is in physical channel space.
pub fn assemble_gradient(
    traj: &Trajectory,
    p: &GenModelParams,
    adj: &AdjointState,
    g_p_explicit: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(traj, p)?;
    let n_p = p.n_learnable();
    if g_p_explicit.len() != n_p {
        return Err(Error::LengthMismatch {
            expected: n_p,
            got: g_p_explicit.len(),
        });
    }
    if adj.r.len() != traj.n_slices() * p.dim {
        return Err(Error::LengthMismatch {
            expected: traj.n_slices() * p.dim,
            got: adj.r.len(),
        });
    }
    let coeffs = farago_coeffs(p)?;
    let d = p.dim;
    let mut g = g_p_explicit.to_vec();
    let mut scratch = BackwardScratch::default();
    // Descending, matching the fused pass so the two routes agree bit
    // for bit.
    for j in (2..=traj.n_steps()).rev() {
        let r_j = &adj.r[j * d..(j + 1) * d];
        param_vjp(p, &coeffs, traj, j, r_j, &mut scratch, &mut g)?;
    }
    seed_param_vjp(p, traj, &adj.r[..d], &adj.r[d..2 * d], &mut g);
    Ok(g)
}

/// Fused backward pass: one sweep computes the cotangents and folds the
/// parameter contraction in as each slice finalizes. Equivalent to
/// `solve_adjoint` followed by `assemble_gradient`; used on the training
/// hot path so networks run one reverse sweep per step instead of two.
pub fn adjoint_gradient(
    traj: &Trajectory,
    p: &GenModelParams,
    g_x: &[f64],
    g_p_explicit: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(traj, p)?;
    let d = p.dim;
    let n = traj.n_steps();
    if g_x.len() != (n + 1) * d {
        return Err(Error::LengthMismatch {
            expected: (n + 1) * d,
            got: g_x.len(),
        });
    }
    let n_p = p.n_learnable();
    if g_p_explicit.len() != n_p {
        return Err(Error::LengthMismatch {
            expected: n_p,
            got: g_p_explicit.len(),
        });
    }
    let coeffs = farago_coeffs(p)?;
    let fcoef = coeffs.b * p.dt * p.dt / p.mass;
    let mut r = g_x.to_vec();
    let mut g = g_p_explicit.to_vec();
    let mut scratch = BackwardScratch::default();
    let pure_neural = matches!(p.force, ForceKind::Neural { .. })
        && p.learn.channels.as_slice() == [Channel::NeuralWeights];

    for j in (2..=n).rev() {
        let (head, tail) = r.split_at_mut(j * d);
        let r_j = &tail[..d];
        if r_j.iter().any(|v| !v.is_finite()) {
            return Err(Error::AdjointBlowup { step: j });
        }
        let (rest, out_jm1) = head.split_at_mut((j - 1) * d);
        let out_jm2 = &mut rest[(j - 2) * d..];
        // Lag-2 first to match the recurrence accumulation order.
        for (o, rj) in out_jm2.iter_mut().zip(r_j) {
            *o -= coeffs.a * rj;
        }
        if pure_neural {
            let (spec, theta) = match &p.force {
                ForceKind::Neural { spec, theta } => (spec, theta),
                _ => unreachable!(),
            };
            let x_prev = traj.slice(j - 1);
            let r2: f64 = x_prev.iter().map(|v| v * v).sum();
            let rad = r2.sqrt();
            if rad < RADIUS_FLOOR {
                return Err(Error::DegenerateRadius(RADIUS_FLOOR));
            }
            scratch.dtheta.resize(theta.len(), 0.0);
            let (f, fp) =
                mlp::mlp_full_into(spec, theta, rad, &mut scratch.mlp, &mut scratch.dtheta)?;
            let proj: f64 = x_prev.iter().zip(r_j).map(|(a, b)| a * b).sum::<f64>() / rad;
            let w = fcoef * proj;
            for (o, dk) in g.iter_mut().zip(&scratch.dtheta) {
                *o += w * dk;
            }
            radial_state_vjp(
                2.0 * coeffs.b,
                fcoef,
                f / rad,
                fp,
                rad,
                x_prev,
                r_j,
                out_jm1,
            );
        } else {
            param_vjp(p, &coeffs, traj, j, r_j, &mut scratch, &mut g)?;
            state_vjp_into(p, &coeffs, fcoef, traj.slice(j - 1), r_j, out_jm1)?;
        }
    }
    for k in 0..SCHEME_ORDER.min(n + 1) {
        if r[k * d..(k + 1) * d].iter().any(|v| !v.is_finite()) {
            return Err(Error::AdjointBlowup { step: k });
        }
    }
    seed_param_vjp(p, traj, &r[..d], &r[d..2 * d], &mut g);
    Ok(g)
}

fn check_shapes(traj: &Trajectory, p: &GenModelParams) -> Result<()> {
    if traj.dim != p.dim || traj.n_steps() != p.n_steps {
        return Err(Error::ProvenanceMismatch(
            "trajectory shape does not match the parameter record".into(),
        ));
    }
    Ok(())
}
