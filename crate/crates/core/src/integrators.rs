//! Two-step stochastic integrator for inertial Langevin dynamics, its
//! force laws, and the per-step Jacobians the adjoint solver consumes.
//!
//! The position-only update producing slice j is
//!
//!   X_j = 2b X_{j-1} - a X_{j-2} + (b dt^2 / m) F(X_{j-1})
//!         + (b dt / 2m) (eta_j + eta_{j-1})
//!
//! with a = (1 - g dt/2m)/(1 + g dt/2m), b = 1/(1 + g dt/2m) and
//! eta_j = sigma sqrt(dt) xi_j for unit normals xi_j. Noise is stored as
//! the unit normals, so the sigma(gamma, kbt) dependence stays explicit
//! and differentiable.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mlp::{self, MlpScratch};
use crate::model::{Channel, ForceKind, GenModelParams, SeedOrigin, Trajectory};
use crate::rng::derive_stream;

pub const RADIUS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaragoCoeffs {
    pub a: f64,
    pub b: f64,
}

/// Scheme coefficients; errors when gamma*dt/(2m) leaves the
/// well-behaved regime.
pub fn farago_coeffs(p: &GenModelParams) -> Result<FaragoCoeffs> {
    let ratio = p.gamma * p.dt / (2.0 * p.mass);
    if ratio >= 1.0 {
        return Err(Error::UnstableScheme { ratio });
    }
    Ok(FaragoCoeffs {
        a: (1.0 - ratio) / (1.0 + ratio),
        b: 1.0 / (1.0 + ratio),
    })
}

pub(crate) fn force_eval_into(p: &GenModelParams, x: &[f64], out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(x.len(), p.dim);
    match &p.force {
        ForceKind::Linear {
            stiffness,
            const_force,
        } => {
            for i in 0..x.len() {
                out[i] = -stiffness * x[i] + const_force[i];
            }
        }
        ForceKind::DoubleWell { kappa, r0 } => {
            // F(r) e_r = -4 kappa (r^2 - r0^2) x; smooth through the origin.
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let coef = -4.0 * kappa * (r2 - r0 * r0);
            for i in 0..x.len() {
                out[i] = coef * x[i];
            }
        }
        ForceKind::Neural { spec, theta } => {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let r = r2.sqrt();
            if r < RADIUS_FLOOR {
                return Err(Error::DegenerateRadius(RADIUS_FLOOR));
            }
            let f = mlp::mlp_forward(spec, theta, r)?;
            for i in 0..x.len() {
                out[i] = f * x[i] / r;
            }
        }
    }
    Ok(())
}

/// Force at a point.
pub fn force_eval(p: &GenModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: x.len(),
        });
    }
    let mut out = vec![0.0; x.len()];
    force_eval_into(p, x, &mut out)?;
    Ok(out)
}

/// Force Jacobian dF/dx as a dim x dim row-major matrix.
pub fn force_grad(p: &GenModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: x.len(),
        });
    }
    let d = x.len();
    let mut out = vec![0.0; d * d];
    match &p.force {
        ForceKind::Linear { stiffness, .. } => {
            for i in 0..d {
                out[i * d + i] = -stiffness;
            }
        }
        ForceKind::DoubleWell { kappa, r0 } => {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let diag = -4.0 * kappa * (r2 - r0 * r0);
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = -8.0 * kappa * x[i] * x[j];
                }
                out[i * d + i] += diag;
            }
        }
        ForceKind::Neural { spec, theta } => {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let r = r2.sqrt();
            if r < RADIUS_FLOOR {
                return Err(Error::DegenerateRadius(RADIUS_FLOOR));
            }
            let (f, fp) = mlp::mlp_value_and_dr(spec, theta, r)?;
            let f_over_r = f / r;
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = (fp - f_over_r) * x[i] * x[j] / r2;
                }
                out[i * d + i] += f_over_r;
            }
        }
    }
    Ok(out)
}

/// Replay the scheme over a supplied unit-normal record. The record has
/// one d-vector per step, slice-major; entry j-1 backs eta_j.
#[allow(clippy::needless_range_loop)]
pub fn simulate_with_noise(
    p: &GenModelParams,
    x0: &[f64],
    x1: &[f64],
    xi: &[f64],
    seed: u64,
) -> Result<Trajectory> {
    p.validate()?;
    let d = p.dim;
    let n = p.n_steps;
    if x0.len() != d || x1.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.len().max(x1.len()),
        });
    }
    if xi.len() != n * d {
        return Err(Error::LengthMismatch {
            expected: n * d,
            got: xi.len(),
        });
    }
    let coeffs = farago_coeffs(p)?;
    let sigma = p.sigma();
    let fcoef = coeffs.b * p.dt * p.dt / p.mass;
    let ncoef = coeffs.b * p.dt / (2.0 * p.mass) * sigma * p.dt.sqrt();

    let mut values = vec![0.0; (n + 1) * d];
    values[..d].copy_from_slice(x0);
    values[d..2 * d].copy_from_slice(x1);
    let mut force = vec![0.0; d];
    for j in 2..=n {
        let (head, tail) = values.split_at_mut(j * d);
        let x_prev = &head[(j - 1) * d..j * d];
        let x_prev2 = &head[(j - 2) * d..(j - 1) * d];
        force_eval_into(p, x_prev, &mut force)?;
        if force.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedSimulation { step: j });
        }
        let xi_j = &xi[(j - 1) * d..j * d];
        let xi_jm1 = &xi[(j - 2) * d..(j - 1) * d];
        let out = &mut tail[..d];
        for i in 0..d {
            out[i] = 2.0 * coeffs.b * x_prev[i] - coeffs.a * x_prev2[i]
                + fcoef * force[i]
                + ncoef * (xi_j[i] + xi_jm1[i]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedSimulation { step: j });
        }
    }
    Ok(Trajectory {
        values,
        noise: xi.to_vec(),
        dt: p.dt,
        seed,
        dim: d,
        seeds: SeedOrigin::Fixed,
    })
}

/// Simulate a fresh realization from two start-up slices and a seeded
/// Gaussian stream.
pub fn simulate(p: &GenModelParams, x0: &[f64], x1: &[f64], seed: u64) -> Result<Trajectory> {
    let mut rng = derive_stream(seed, &[]);
    let n_draws = p.n_steps * p.dim;
    let mut xi = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z: f64 = StandardNormal.sample(&mut rng);
        xi.push(z);
    }
    simulate_with_noise(p, x0, x1, &xi, seed)
}

/// Start-up slices drawn from the model's own stationary state,
/// reparameterized over unit normals: positions at scale
/// sqrt(kBT/K0), velocities at sqrt(kBT/m), and x1 = x0 + dt v0.
/// Linear force with zero constant offset only.
pub fn equilibrium_seeds_from_draws(
    p: &GenModelParams,
    z_pos: &[f64],
    z_vel: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k0 = match &p.force {
        ForceKind::Linear {
            stiffness,
            const_force,
        } if *stiffness > 0.0 => {
            if const_force.iter().any(|v| *v != 0.0) {
                return Err(Error::Config(
                    "model-equilibrium seeding requires a zero constant force".into(),
                ));
            }
            *stiffness
        }
        _ => {
            return Err(Error::Config(
                "model-equilibrium seeding needs a linear force with positive stiffness".into(),
            ))
        }
    };
    if !p.kbt.is_finite() || p.kbt <= 0.0 {
        return Err(Error::Config(
            "model-equilibrium seeding needs kbt > 0".into(),
        ));
    }
    if z_pos.len() != p.dim || z_vel.len() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            got: z_pos.len(),
        });
    }
    let sx = (p.kbt / k0).sqrt();
    let sv = (p.kbt / p.mass).sqrt();
    let x0: Vec<f64> = z_pos.iter().map(|z| sx * z).collect();
    let x1: Vec<f64> = x0
        .iter()
        .zip(z_vel)
        .map(|(x, z)| x + p.dt * sv * z)
        .collect();
    Ok((x0, x1))
}

/// Simulate a realization whose start-up slices are sampled from the
/// model's own equilibrium. The trajectory records the seed draws, so
/// the path stays differentiable through the seed scales as well as
/// the noise scales.
pub fn simulate_from_equilibrium(p: &GenModelParams, seed: u64) -> Result<Trajectory> {
    let mut rng = derive_stream(seed, &[1]);
    let z_pos: Vec<f64> = (0..p.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
        .collect();
    let z_vel: Vec<f64> = (0..p.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
        .collect();
    let (x0, x1) = equilibrium_seeds_from_draws(p, &z_pos, &z_vel)?;
    let mut traj = simulate(p, &x0, &x1, seed)?;
    traj.seeds = SeedOrigin::ModelEquilibrium { z_pos, z_vel };
    Ok(traj)
}

/// Partials of the update map producing slice j+1 from slices j, j-1.
#[derive(Clone, Debug)]
pub struct StepJacobians {
    /// d x d: derivative in the newest state argument.
    pub d_xj: Vec<f64>,
    /// d x d: derivative in the older state argument.
    pub d_xjm1: Vec<f64>,
    /// d x n_p: derivative in the learnable physical channels.
    pub d_p: Vec<f64>,
}

/// Jacobians of the update producing slice j+1, for 1 <= j <= N-1.
pub fn step_jacobians(p: &GenModelParams, traj: &Trajectory, j: usize) -> Result<StepJacobians> {
    let n = traj.n_steps();
    if j < 1 || j > n - 1 {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: n - 1,
        });
    }
    if traj.dim != p.dim || n != p.n_steps {
        return Err(Error::ProvenanceMismatch(
            "trajectory shape does not match the parameter record".into(),
        ));
    }
    let d = p.dim;
    let coeffs = farago_coeffs(p)?;
    let fcoef = coeffs.b * p.dt * p.dt / p.mass;
    let x_j = traj.slice(j);

    let fg = force_grad(p, x_j)?;
    let mut d_xj = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            d_xj[i * d + k] = fcoef * fg[i * d + k];
        }
        d_xj[i * d + i] += 2.0 * coeffs.b;
    }
    let mut d_xjm1 = vec![0.0; d * d];
    for i in 0..d {
        d_xjm1[i * d + i] = -coeffs.a;
    }

    let n_p = p.n_learnable();
    let mut d_p = vec![0.0; d * n_p];
    let mut scratch = BackwardScratch::default();
    // Columns follow the packed learnable layout; values are physical
    // (pre log-space chain).
    fill_dpsi_dp(p, &coeffs, traj, j + 1, &mut scratch, |i, col, v| {
        d_p[i * n_p + col] += v;
    })?;

    Ok(StepJacobians { d_xj, d_xjm1, d_p })
}

#[derive(Default)]
pub(crate) struct BackwardScratch {
    pub(crate) mlp: MlpScratch,
    pub(crate) dtheta: Vec<f64>,
    pub(crate) force: Vec<f64>,
}

/// Walk the nonzero entries of dPsi/dp for the update producing slice
/// `j` (2 <= j <= N), emitting (output component, learnable column,
/// value). Shared by the dense Jacobian op and the adjoint contraction.
#[allow(clippy::needless_range_loop)]
pub(crate) fn fill_dpsi_dp<F: FnMut(usize, usize, f64)>(
    p: &GenModelParams,
    coeffs: &FaragoCoeffs,
    traj: &Trajectory,
    j: usize,
    scratch: &mut BackwardScratch,
    mut emit: F,
) -> Result<()> {
    debug_assert!(j >= 2 && j <= traj.n_steps());
    let d = p.dim;
    let x_prev = traj.slice(j - 1);
    let x_prev2 = traj.slice(j - 2);
    let xi_j = traj.noise_slice(j);
    let xi_jm1 = traj.noise_slice(j - 1);

    let sigma = p.sigma();
    let c_half = p.dt / (2.0 * p.mass);
    let fcoef = coeffs.b * p.dt * p.dt / p.mass;
    let nbase = c_half * p.dt.sqrt();
    let db_dgamma = -c_half * coeffs.b * coeffs.b;
    let da_dgamma = -2.0 * c_half * coeffs.b * coeffs.b;

    let mut col = 0;
    for &ch in &p.learn.channels {
        match ch {
            Channel::Stiffness => {
                for i in 0..d {
                    emit(i, col, -fcoef * x_prev[i]);
                }
                col += 1;
            }
            Channel::ConstForce(fi) => {
                emit(fi, col, fcoef);
                col += 1;
            }
            Channel::Temperature => {
                // Only through sigma: dsigma/dkbt = gamma / sigma.
                let dsig = p.gamma / sigma;
                let w = coeffs.b * nbase * dsig;
                for i in 0..d {
                    emit(i, col, w * (xi_j[i] + xi_jm1[i]));
                }
                col += 1;
            }
            Channel::Damping => {
                scratch.force.resize(d, 0.0);
                force_eval_into(p, x_prev, &mut scratch.force)?;
                let dsig = p.kbt / sigma;
                for i in 0..d {
                    let s = xi_j[i] + xi_jm1[i];
                    let v = db_dgamma
                        * (2.0 * x_prev[i]
                            + (p.dt * p.dt / p.mass) * scratch.force[i]
                            + sigma * nbase * s)
                        - da_dgamma * x_prev2[i]
                        + coeffs.b * nbase * dsig * s;
                    emit(i, col, v);
                }
                col += 1;
            }
            Channel::NeuralWeights => {
                let (spec, theta) = match &p.force {
                    ForceKind::Neural { spec, theta } => (spec, theta),
                    _ => unreachable!("validated learn spec"),
                };
                let r2: f64 = x_prev.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                if r < RADIUS_FLOOR {
                    return Err(Error::DegenerateRadius(RADIUS_FLOOR));
                }
                scratch.dtheta.resize(theta.len(), 0.0);
                mlp::mlp_full_into(spec, theta, r, &mut scratch.mlp, &mut scratch.dtheta)?;
                for i in 0..d {
                    let w = fcoef * x_prev[i] / r;
                    if w == 0.0 {
                        continue;
                    }
                    for (k, dk) in scratch.dtheta.iter().enumerate() {
                        if *dk != 0.0 {
                            emit(i, col + k, w * dk);
                        }
                    }
                }
                col += theta.len();
            }
        }
    }
    Ok(())
}

/// Accumulate (dPsi/dp)^T r into `out` for the update producing slice j.
pub(crate) fn param_vjp(
    p: &GenModelParams,
    coeffs: &FaragoCoeffs,
    traj: &Trajectory,
    j: usize,
    r: &[f64],
    scratch: &mut BackwardScratch,
    out: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(r.len(), p.dim);
    debug_assert_eq!(out.len(), p.n_learnable());
    // Neural steps contract through the radial direction instead of
    // materializing the d x n_p block.
    if let (ForceKind::Neural { spec, theta }, true) =
        (&p.force, p.learn.channels.contains(&Channel::NeuralWeights))
    {
        let d = p.dim;
        let x_prev = traj.slice(j - 1);
        let r2: f64 = x_prev.iter().map(|v| v * v).sum();
        let rad = r2.sqrt();
        if rad < RADIUS_FLOOR {
            return Err(Error::DegenerateRadius(RADIUS_FLOOR));
        }
        let fcoef = coeffs.b * p.dt * p.dt / p.mass;
        let proj: f64 = (0..d).map(|i| x_prev[i] * r[i]).sum::<f64>() / rad;
        scratch.dtheta.resize(theta.len(), 0.0);
        mlp::mlp_full_into(spec, theta, rad, &mut scratch.mlp, &mut scratch.dtheta)?;
        let mut col = 0;
        for &ch in &p.learn.channels {
            if ch == Channel::NeuralWeights {
                let w = fcoef * proj;
                for (o, dk) in out[col..col + theta.len()].iter_mut().zip(&scratch.dtheta) {
                    *o += w * dk;
                }
                col += theta.len();
            } else {
                // Scalar channels handled by the generic walker below.
                col += 1;
            }
        }
        // Remaining scalar channels (if any) fall through to the walker
        // with the neural block masked out.
        if p.learn
            .channels
            .iter()
            .any(|c| *c != Channel::NeuralWeights)
        {
            let scalar_only = scalar_channel_walker(p, coeffs, traj, j, scratch, r, out)?;
            debug_assert!(scalar_only <= out.len());
        }
        return Ok(());
    }
    fill_dpsi_dp(p, coeffs, traj, j, scratch, |i, col, v| {
        out[col] += v * r[i];
    })
}

/// Seed-row contribution to the gradient when the start-up slices were
/// sampled from the model equilibrium: accumulates
/// r0^T dx0/dp + r1^T dx1/dp. With x0 = sqrt(kbt/k0) z and
/// x1 = x0 + dt sqrt(kbt/m) z', the per-channel rows reduce to scalings
/// of the stored slices: dx0/dk0 = dx1/dk0 = -x0/(2 k0),
/// dx0/dkbt = x0/(2 kbt), dx1/dkbt = x1/(2 kbt).
pub(crate) fn seed_param_vjp(
    p: &GenModelParams,
    traj: &Trajectory,
    r0: &[f64],
    r1: &[f64],
    out: &mut [f64],
) {
    if !matches!(traj.seeds, SeedOrigin::ModelEquilibrium { .. }) {
        return;
    }
    let x0 = traj.slice(0);
    let x1 = traj.slice(1);
    let mut col = 0;
    for &ch in &p.learn.channels {
        match ch {
            Channel::Stiffness => {
                if let ForceKind::Linear { stiffness, .. } = &p.force {
                    let w = -0.5 / stiffness;
                    let dot: f64 = x0
                        .iter()
                        .zip(r0.iter().zip(r1))
                        .map(|(x, (a, b))| x * (a + b))
                        .sum();
                    out[col] += w * dot;
                }
                col += 1;
            }
            Channel::Temperature => {
                let w = 0.5 / p.kbt;
                let dot: f64 = x0.iter().zip(r0).map(|(x, r)| x * r).sum::<f64>()
                    + x1.iter().zip(r1).map(|(x, r)| x * r).sum::<f64>();
                out[col] += w * dot;
                col += 1;
            }
            Channel::Damping | Channel::ConstForce(_) => col += 1,
            Channel::NeuralWeights => {
                if let ForceKind::Neural { theta, .. } = &p.force {
                    col += theta.len();
                }
            }
        }
    }
}

/// Scalar-channel part of the parameter VJP when a neural block is also
/// present; returns the number of columns touched.
fn scalar_channel_walker(
    p: &GenModelParams,
    coeffs: &FaragoCoeffs,
    traj: &Trajectory,
    j: usize,
    scratch: &mut BackwardScratch,
    r: &[f64],
    out: &mut [f64],
) -> Result<usize> {
    let mut masked = p.clone();
    masked
        .learn
        .channels
        .retain(|c| *c != Channel::NeuralWeights);
    let mut touched = 0;
    // Column positions in the original layout.
    let mut col_map = Vec::new();
    let mut col = 0;
    for &ch in &p.learn.channels {
        if ch == Channel::NeuralWeights {
            if let ForceKind::Neural { theta, .. } = &p.force {
                col += theta.len();
            }
        } else {
            col_map.push(col);
            col += 1;
        }
    }
    fill_dpsi_dp(&masked, coeffs, traj, j, scratch, |i, mcol, v| {
        out[col_map[mcol]] += v * r[i];
        touched += 1;
    })?;
    Ok(touched)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::model::LearnSpec;
    use crate::rng::derive_stream;
    use rand_distr::{Distribution, StandardNormal};

    fn ou_params() -> GenModelParams {
        GenModelParams {
            mass: 0.1,
            gamma: 3.2,
            kbt: 0.1,
            force: ForceKind::Linear {
                stiffness: 1.5,
                const_force: vec![0.0; 3],
            },
            dt: 1e-3,
            n_steps: 18,
            dim: 3,
            learn: LearnSpec::new(vec![
                Channel::Stiffness,
                Channel::Damping,
                Channel::Temperature,
            ]),
        }
    }

    #[test]
    fn coeffs_match_hand_values() {
        let c = farago_coeffs(&ou_params()).unwrap();
        assert!((c.a - 0.968_503_937_007_874).abs() < 1e-12, "a = {}", c.a);
        assert!((c.b - 0.984_251_968_503_937).abs() < 1e-12, "b = {}", c.b);
    }

    #[test]
    fn undamped_limit() {
        let mut p = ou_params();
        p.gamma = 0.0;
        p.learn = LearnSpec::none();
        let c = farago_coeffs(&p).unwrap();
        assert_eq!(c.a, 1.0);
        assert_eq!(c.b, 1.0);
    }

    #[test]
    fn stability_regime_is_enforced() {
        let mut p = ou_params();
        p.gamma = 250.0; // ratio = 1.25
        p.learn = LearnSpec::none();
        assert!(matches!(
            farago_coeffs(&p),
            Err(Error::UnstableScheme { .. })
        ));
    }

    #[test]
    fn divergence_reports_the_offending_step() {
        let mut p = ou_params();
        p.force = ForceKind::Linear { stiffness: 1e307, const_force: vec![0.0; 3] };
        p.learn = LearnSpec::none();
        match simulate(&p, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 5) {
            Err(Error::DivergedSimulation { step }) => assert!(step >= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn free_flight_is_linear_extrapolation() {
        let mut p = ou_params();
        p.gamma = 0.0;
        p.kbt = 0.0;
        p.force = ForceKind::Linear {
            stiffness: 0.0,
            const_force: vec![0.0; 3],
        };
        p.learn = LearnSpec::none();
        let x0 = [0.1, -0.2, 0.3];
        let x1 = [0.15, -0.1, 0.25];
        let t = simulate(&p, &x0, &x1, 7).unwrap();
        for j in 2..=p.n_steps {
            for i in 0..3 {
                let expect = 2.0 * t.slice(j - 1)[i] - t.slice(j - 2)[i];
                assert!((t.slice(j)[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_bit_identical_paths() {
        let p = ou_params();
        let x0 = [0.01, 0.0, -0.02];
        let x1 = [0.012, 0.001, -0.019];
        let a = simulate(&p, &x0, &x1, 991).unwrap();
        let b = simulate(&p, &x0, &x1, 991).unwrap();
        assert_eq!(a, b);
        let c = simulate(&p, &x0, &x1, 992).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn replaying_the_noise_record_reproduces_values() {
        let p = ou_params();
        let x0 = [0.01, 0.0, -0.02];
        let x1 = [0.012, 0.001, -0.019];
        let t = simulate(&p, &x0, &x1, 55).unwrap();
        let r = simulate_with_noise(&p, &x0, &x1, &t.noise, t.seed).unwrap();
        assert_eq!(t.values, r.values);
    }

    #[test]
    fn two_step_form_matches_velocity_verlet_positions() {
        // The (X, V) scheme with a consistent start-up velocity produces
        // the same positions as the position-only recursion.
        let p = ou_params();
        let d = p.dim;
        let coeffs = farago_coeffs(&p).unwrap();
        let sigma = p.sigma();
        let x0 = vec![0.05, -0.03, 0.08];
        let x1 = vec![0.052, -0.028, 0.079];
        let traj = simulate(&p, &x0, &x1, 313).unwrap();

        let eta = |j: usize, i: usize| -> f64 { sigma * p.dt.sqrt() * traj.noise_slice(j)[i] };
        let f = |x: &[f64]| force_eval(&p, x).unwrap();

        // v0 chosen so the first VV position step lands exactly on x1.
        let f0 = f(&x0);
        let mut v: Vec<f64> = (0..d)
            .map(|i| {
                (x1[i]
                    - x0[i]
                    - coeffs.b * p.dt * p.dt / (2.0 * p.mass) * f0[i]
                    - coeffs.b * p.dt / (2.0 * p.mass) * eta(1, i))
                    / (coeffs.b * p.dt)
            })
            .collect();
        let mut x = x0.clone();
        let mut fx = f0;
        for n in 0..p.n_steps {
            let mut x_next = vec![0.0; d];
            for i in 0..d {
                x_next[i] = x[i]
                    + coeffs.b * p.dt * v[i]
                    + coeffs.b * p.dt * p.dt / (2.0 * p.mass) * fx[i]
                    + coeffs.b * p.dt / (2.0 * p.mass) * eta(n + 1, i);
            }
            let f_next = f(&x_next);
            for i in 0..d {
                v[i] = coeffs.a * v[i]
                    + p.dt / (2.0 * p.mass) * (coeffs.a * fx[i] + f_next[i])
                    + coeffs.b / p.mass * eta(n + 1, i);
            }
            x = x_next;
            fx = f_next;
            for i in 0..d {
                assert!(
                    (x[i] - traj.slice(n + 1)[i]).abs() < 1e-12,
                    "slice {} component {i}: vv={} two-step={}",
                    n + 1,
                    x[i],
                    traj.slice(n + 1)[i]
                );
            }
        }
    }

    #[test]
    fn linear_force_values() {
        let p = ou_params();
        assert_eq!(force_eval(&p, &[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        let f = force_eval(&p, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, vec![-1.5, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_radius_is_reported() {
        let mut p = ou_params();
        let spec = MlpSpecFixture::small();
        let theta = vec![0.1; spec.param_count()];
        p.force = ForceKind::Neural { spec, theta };
        p.learn = LearnSpec::none();
        assert!(matches!(
            force_eval(&p, &[0.0, 0.0, 0.0]),
            Err(Error::DegenerateRadius(_))
        ));
    }

    struct MlpSpecFixture;
    impl MlpSpecFixture {
        fn small() -> crate::mlp::MlpSpec {
            crate::mlp::MlpSpec::scalar_net(&[6, 5], 0.01).unwrap()
        }
    }

    fn neural_params() -> GenModelParams {
        let spec = MlpSpecFixture::small();
        let mut rng = derive_stream(4242, &[9]);
        let theta = spec.init_weights(&mut rng);
        GenModelParams {
            mass: 0.1,
            gamma: 3.2,
            kbt: 0.1,
            force: ForceKind::Neural { spec, theta },
            dt: 1e-3,
            n_steps: 12,
            dim: 3,
            learn: LearnSpec::new(vec![Channel::NeuralWeights]),
        }
    }

    fn close(a: f64, b: f64, abs: f64) -> bool {
        (a - b).abs() <= abs + 1e-6 * a.abs().max(b.abs())
    }

    #[test]
    fn radial_force_jacobian_matches_finite_differences() {
        let p = neural_params();
        let x = [0.8, -0.5, 0.4];
        let g = force_grad(&p, &x).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = force_eval(&p, &xp).unwrap();
            let fm = force_eval(&p, &xm).unwrap();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    close(g[i * 3 + k], fd, 1e-8),
                    "entry ({i},{k}): analytic={} fd={fd}",
                    g[i * 3 + k]
                );
            }
        }
    }

    #[test]
    fn double_well_jacobian_matches_finite_differences() {
        let mut p = ou_params();
        p.force = ForceKind::DoubleWell {
            kappa: 1.0,
            r0: 1.0,
        };
        p.learn = LearnSpec::none();
        let x = [0.9, 0.1, -0.3];
        let g = force_grad(&p, &x).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = force_eval(&p, &xp).unwrap();
            let fm = force_eval(&p, &xm).unwrap();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(close(g[i * 3 + k], fd, 1e-8));
            }
        }
    }

    fn random_traj(p: &GenModelParams, seed: u64) -> Trajectory {
        let mut rng = derive_stream(seed, &[0]);
        let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
            (0..p.dim)
                .map(|_| StandardNormal.sample(rng))
                .collect::<Vec<f64>>()
        };
        let x0: Vec<f64> = draw(&mut rng).iter().map(|v| 0.5 + 0.05 * v).collect();
        let x1: Vec<f64> = x0
            .iter()
            .zip(draw(&mut rng))
            .map(|(a, v)| a + 1e-3 * v)
            .collect();
        simulate(p, &x0, &x1, seed ^ 0xabcd).unwrap()
    }

    #[test]
    fn step_jacobians_linear_closed_forms() {
        let p = ou_params();
        let traj = random_traj(&p, 17);
        let j = 5;
        let sj = step_jacobians(&p, &traj, j).unwrap();
        let c = farago_coeffs(&p).unwrap();
        let scale = 2.0 * c.b - c.b * p.dt * p.dt * 1.5 / p.mass;
        for i in 0..3 {
            for k in 0..3 {
                let expect = if i == k { scale } else { 0.0 };
                assert!((sj.d_xj[i * 3 + k] - expect).abs() < 1e-14);
                let expect2 = if i == k { -c.a } else { 0.0 };
                assert!((sj.d_xjm1[i * 3 + k] - expect2).abs() < 1e-14);
            }
        }
        // Stiffness column: -(b dt^2/m) X_j.
        let fcoef = c.b * p.dt * p.dt / p.mass;
        let n_p = p.n_learnable();
        for i in 0..3 {
            assert!((sj.d_p[i * n_p] + fcoef * traj.slice(j)[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn step_jacobians_index_bounds() {
        let p = ou_params();
        let traj = random_traj(&p, 23);
        assert!(step_jacobians(&p, &traj, 0).is_err());
        assert!(step_jacobians(&p, &traj, p.n_steps).is_err());
        assert!(step_jacobians(&p, &traj, p.n_steps - 1).is_ok());
    }

    /// One frozen-noise update step for finite differencing.
    fn one_step(
        p: &GenModelParams,
        traj: &Trajectory,
        j: usize,
        x_j: &[f64],
        x_jm1: &[f64],
    ) -> Vec<f64> {
        let c = farago_coeffs(p).unwrap();
        let sigma = p.sigma();
        let fcoef = c.b * p.dt * p.dt / p.mass;
        let ncoef = c.b * p.dt / (2.0 * p.mass) * sigma * p.dt.sqrt();
        let f = force_eval(p, x_j).unwrap();
        let xi_new = traj.noise_slice(j + 1);
        let xi_old = traj.noise_slice(j);
        (0..p.dim)
            .map(|i| {
                2.0 * c.b * x_j[i] - c.a * x_jm1[i] + fcoef * f[i] + ncoef * (xi_new[i] + xi_old[i])
            })
            .collect()
    }

    fn check_step_jacobians_fd(p: &GenModelParams, seed: u64, j: usize) {
        let traj = random_traj(p, seed);
        let sj = step_jacobians(p, &traj, j).unwrap();
        let d = p.dim;
        let x_j = traj.slice(j).to_vec();
        let x_jm1 = traj.slice(j - 1).to_vec();

        // State arguments.
        let h = 1e-5;
        for k in 0..d {
            let mut xp = x_j.clone();
            let mut xm = x_j.clone();
            xp[k] += h;
            xm[k] -= h;
            let fp = one_step(p, &traj, j, &xp, &x_jm1);
            let fm = one_step(p, &traj, j, &xm, &x_jm1);
            for i in 0..d {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(close(sj.d_xj[i * d + k], fd, 1e-9));
            }
            let mut xp = x_jm1.clone();
            let mut xm = x_jm1.clone();
            xp[k] += h;
            xm[k] -= h;
            let fp = one_step(p, &traj, j, &x_j, &xp);
            let fm = one_step(p, &traj, j, &x_j, &xm);
            for i in 0..d {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(close(sj.d_xjm1[i * d + k], fd, 1e-9));
            }
        }

        // Physical parameter channels, frozen noise. The update values
        // are O(X), so the cancellation floor sits near eps*|X|/h.
        let q_names = p.learnable_names();
        let n_p = p.n_learnable();
        let h = 1e-4;
        for col in (0..n_p).step_by(if n_p > 16 { 11 } else { 1 }) {
            let mut pp = p.clone();
            let mut pm = p.clone();
            perturb_physical(&mut pp, col, h);
            perturb_physical(&mut pm, col, -h);
            let fp = one_step(&pp, &traj, j, &x_j, &x_jm1);
            let fm = one_step(&pm, &traj, j, &x_j, &x_jm1);
            for i in 0..d {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    close(sj.d_p[i * n_p + col], fd, 1e-11),
                    "channel {} (col {col}), comp {i}: analytic={} fd={fd}",
                    q_names[col],
                    sj.d_p[i * n_p + col]
                );
            }
        }
    }

    /// Shift one physical learnable entry by delta (no log transform).
    fn perturb_physical(p: &mut GenModelParams, col: usize, delta: f64) {
        let mut off = 0;
        let channels = p.learn.channels.clone();
        for ch in channels {
            match ch {
                Channel::Stiffness => {
                    if col == off {
                        if let ForceKind::Linear { stiffness, .. } = &mut p.force {
                            *stiffness += delta;
                        }
                    }
                    off += 1;
                }
                Channel::Damping => {
                    if col == off {
                        p.gamma += delta;
                    }
                    off += 1;
                }
                Channel::Temperature => {
                    if col == off {
                        p.kbt += delta;
                    }
                    off += 1;
                }
                Channel::ConstForce(i) => {
                    if col == off {
                        if let ForceKind::Linear { const_force, .. } = &mut p.force {
                            const_force[i] += delta;
                        }
                    }
                    off += 1;
                }
                Channel::NeuralWeights => {
                    if let ForceKind::Neural { theta, .. } = &mut p.force {
                        if col >= off && col < off + theta.len() {
                            theta[col - off] += delta;
                        }
                        off += theta.len();
                    }
                }
            }
        }
    }

    #[test]
    fn step_jacobians_match_finite_differences_linear() {
        let mut p = ou_params();
        if let ForceKind::Linear { const_force, .. } = &mut p.force {
            const_force[2] = -0.4;
        }
        p.learn = LearnSpec::new(vec![
            Channel::Stiffness,
            Channel::Damping,
            Channel::Temperature,
            Channel::ConstForce(2),
        ]);
        check_step_jacobians_fd(&p, 31, 7);
    }

    #[test]
    fn step_jacobians_match_finite_differences_neural() {
        let p = neural_params();
        check_step_jacobians_fd(&p, 37, 4);
    }

    #[test]
    fn param_vjp_agrees_with_dense_block() {
        for p in [
            {
                let mut p = ou_params();
                p.learn = LearnSpec::new(vec![
                    Channel::Stiffness,
                    Channel::Damping,
                    Channel::Temperature,
                ]);
                p
            },
            neural_params(),
        ] {
            let traj = random_traj(&p, 71);
            let coeffs = farago_coeffs(&p).unwrap();
            let j = 6;
            let r: Vec<f64> = (0..p.dim).map(|i| 0.3 - 0.2 * i as f64).collect();
            let n_p = p.n_learnable();
            let mut out = vec![0.0; n_p];
            let mut scratch = BackwardScratch::default();
            param_vjp(&p, &coeffs, &traj, j, &r, &mut scratch, &mut out).unwrap();
            let sj = step_jacobians(&p, &traj, j - 1).unwrap();
            for col in 0..n_p {
                let dense: f64 = (0..p.dim).map(|i| r[i] * sj.d_p[i * n_p + col]).sum();
                let denom = dense.abs().max(out[col].abs()).max(1e-12);
                assert!(
                    ((dense - out[col]) / denom).abs() < 1e-12,
                    "col {col}: dense={dense} vjp={}",
                    out[col]
                );
            }
        }
    }
}
