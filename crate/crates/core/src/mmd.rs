//! Unbiased squared-MMD estimator between generated and observed
//! fragment batches, and its gradient with respect to the generator
//! parameters.
//!
//! The gradient contracts kernel partials into one cotangent vector per
//! generated sample, scatters those onto the sample's trajectory slices,
//! and runs one adjoint sweep per sample. The observed batch carries no
//! parameter dependence and the kernel hyperparameters are fixed, so the
//! data-data term contributes nothing.

use rayon::prelude::*;

use crate::adjoint::adjoint_gradient;
use crate::error::{Error, Result};
use crate::kernels::{rqk_eval_unchecked, rqk_grad1_into, KernelConfig};
use crate::model::{GenModelParams, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrigin {
    Generator,
    Data,
}

/// A batch of flattened trajectory fragments plus the bookkeeping needed
/// to push kernel cotangents back onto trajectory slices.
#[derive(Clone, Debug)]
pub struct FragmentBatch {
    /// One flattened fragment per sample (slice-major, dims within).
    pub fragments: Vec<Vec<f64>>,
    pub origin: BatchOrigin,
    /// Slice offsets shared by every fragment, relative to its anchor.
    pub pattern: Vec<usize>,
    /// Absolute slice indices per fragment in its source trajectory.
    pub slice_ids: Vec<Vec<usize>>,
    /// Index of the source trajectory per fragment.
    pub sources: Vec<usize>,
    pub dim: usize,
}

impl FragmentBatch {
    /// Wrap bare vectors as a batch; each coordinate counts as one slice
    /// of a one-dimensional path.
    pub fn from_vectors(fragments: Vec<Vec<f64>>, origin: BatchOrigin) -> Result<Self> {
        let len = fragments.first().map_or(0, |f| f.len());
        if fragments.iter().any(|f| f.len() != len) {
            return Err(Error::InvalidBatch("fragments have unequal lengths".into()));
        }
        let pattern: Vec<usize> = (0..len).collect();
        let slice_ids = vec![pattern.clone(); fragments.len()];
        let sources = (0..fragments.len()).collect();
        Ok(Self {
            fragments,
            origin,
            pattern,
            slice_ids,
            sources,
            dim: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn coords(&self) -> usize {
        self.pattern.len() * self.dim
    }

    fn validate(&self) -> Result<()> {
        let coords = self.coords();
        if self.fragments.iter().any(|f| f.len() != coords) {
            return Err(Error::InvalidBatch(
                "fragment length inconsistent with slice pattern".into(),
            ));
        }
        if self.slice_ids.len() != self.len() || self.sources.len() != self.len() {
            return Err(Error::InvalidBatch(
                "per-fragment metadata length mismatch".into(),
            ));
        }
        Ok(())
    }
}

fn check_pair(a: &FragmentBatch, b: &FragmentBatch) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidBatch(format!(
            "unbiased estimator needs at least two samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.coords() != b.coords() {
        return Err(Error::DimensionMismatch {
            expected: a.coords(),
            got: b.coords(),
        });
    }
    // Both sides must compare identical slice-index patterns.
    if a.pattern != b.pattern || a.dim != b.dim {
        return Err(Error::InvalidBatch(
            "batches select different slice patterns; fragments are not comparable".into(),
        ));
    }
    Ok(())
}

/// Unbiased squared-MMD estimate; may be negative.
pub fn mmd2_unbiased(gen: &FragmentBatch, data: &FragmentBatch, cfg: &KernelConfig) -> Result<f64> {
    check_pair(gen, data)?;
    let n = gen.len();
    let m = data.len();

    // Row sums collected per index, then reduced in index order, so the
    // value is independent of the worker count.
    let xx: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    s += rqk_eval_unchecked(&gen.fragments[i], &gen.fragments[j], cfg);
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let xy: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..m {
                s += rqk_eval_unchecked(&gen.fragments[i], &data.fragments[j], cfg);
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let yy: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..m {
                if i != j {
                    s += rqk_eval_unchecked(&data.fragments[i], &data.fragments[j], cfg);
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();

    Ok(xx / (n * (n - 1)) as f64 - 2.0 * xy / (n * m) as f64 + yy / (m * (m - 1)) as f64)
}

/// Fragment-space cotangent of the loss for each generated sample:
/// d mmd2 / d X_i contracted over both estimator terms.
#[allow(clippy::needless_range_loop)]
fn sample_cotangents(
    gen: &FragmentBatch,
    data: &FragmentBatch,
    cfg: &KernelConfig,
) -> Vec<Vec<f64>> {
    let n = gen.len();
    let m = data.len();
    let coords = gen.coords();
    let w_xx = 2.0 / (n * (n - 1)) as f64;
    let w_xy = 2.0 / (n * m) as f64;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = vec![0.0; coords];
            let mut g = vec![0.0; coords];
            for j in 0..n {
                if j == i {
                    continue;
                }
                rqk_grad1_into(&gen.fragments[i], &gen.fragments[j], cfg, &mut g);
                for (ck, gk) in c.iter_mut().zip(&g) {
                    *ck += w_xx * gk;
                }
            }
            for j in 0..m {
                rqk_grad1_into(&gen.fragments[i], &data.fragments[j], cfg, &mut g);
                for (ck, gk) in c.iter_mut().zip(&g) {
                    *ck -= w_xy * gk;
                }
            }
            c
        })
        .collect()
}

/// Gradient of the unbiased estimator with respect to the learnable
/// channels (log-space channels chained). Fragment cotangents scatter
/// onto the slices of their source trajectories (several fragments may
/// share one), then one adjoint sweep runs per touched trajectory.
#[allow(clippy::needless_range_loop)]
pub fn mmd2_grad(
    gen: &FragmentBatch,
    gen_trajs: &[Trajectory],
    data: &FragmentBatch,
    p: &GenModelParams,
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    check_pair(gen, data)?;
    if gen.origin != BatchOrigin::Generator {
        return Err(Error::ProvenanceMismatch(
            "first batch must come from the generator".into(),
        ));
    }
    let d = p.dim;
    if gen.dim != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: gen.dim,
        });
    }
    for (i, (&src, ids)) in gen.sources.iter().zip(&gen.slice_ids).enumerate() {
        let t = gen_trajs.get(src).ok_or_else(|| {
            Error::ProvenanceMismatch(format!(
                "fragment {i} references trajectory {src} but only {} were supplied",
                gen_trajs.len()
            ))
        })?;
        if t.dim != d || t.n_steps() != p.n_steps {
            return Err(Error::ProvenanceMismatch(format!(
                "trajectory {src} does not match the parameter record"
            )));
        }
        if ids.iter().any(|&s| s >= t.n_slices()) {
            return Err(Error::ProvenanceMismatch(format!(
                "fragment {i} references slices outside trajectory {src}"
            )));
        }
    }

    let cot = sample_cotangents(gen, data, cfg);

    // Per-trajectory cotangent fields, accumulated in fragment order.
    let n_slices = p.n_slices();
    let mut per_traj: Vec<Option<Vec<f64>>> = vec![None; gen_trajs.len()];
    for i in 0..gen.len() {
        let src = gen.sources[i];
        let g_x = per_traj[src].get_or_insert_with(|| vec![0.0; n_slices * d]);
        for (slot, &slice) in gen.slice_ids[i].iter().enumerate() {
            for k in 0..d {
                g_x[slice * d + k] += cot[i][slot * d + k];
            }
        }
    }
    let touched: Vec<(usize, Vec<f64>)> = per_traj
        .into_iter()
        .enumerate()
        .filter_map(|(src, g)| g.map(|g| (src, g)))
        .collect();

    let n_p = p.n_learnable();
    let per_sample: Vec<Result<Vec<f64>>> = touched
        .into_par_iter()
        .map(|(src, g_x)| adjoint_gradient(&gen_trajs[src], p, &g_x, &vec![0.0; n_p]))
        .collect();

    let mut total = vec![0.0; n_p];
    for g in per_sample {
        let g = g?;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    p.grad_to_learnable(&total)
}
