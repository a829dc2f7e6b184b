//! Fragment extraction for the three training protocols, plus the
//! seeding rule that hands data start-up slices to the generator.
//!
//! Slice arithmetic, with a = tau/dt (integer) and two seed slices at
//! spacing dt:
//!
//! * full_traj:    (k=0 only)  [0, 1 | 1, 1+a, 1+2a, ...] up to the horizon
//! * marginals:    per offset k [k, k+1 | k+a, k+2a, ..., k+la]
//! * conditionals: compared fragments are the evolving block only,
//!   [k+a, ..., k+la]; the seed block [k, k+1] forms the conditioning
//!   fragment.
//!
//! Offsets default to a uniform stride covering the horizon. Time stamps
//! never enter fragments; values on the shared uniform grid do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmd::{BatchOrigin, FragmentBatch};
use crate::model::Trajectory;

/// Seed slices consumed by the two-step scheme.
pub const SEED_SLICES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    FullTraj,
    Marginals,
    Conditionals,
}

/// Extraction rule. The seed-state spacing is the trajectory grid step
/// and offsets follow t_k = k dt, s_k = t_k + tau.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Sub-sampling time-scale for the evolving slices; integer multiple
    /// of the grid step.
    pub tau: f64,
    /// Evolving-slice count per fragment (marginals/conditionals).
    pub frag_len: usize,
    /// Offsets per trajectory (marginals/conditionals).
    pub n_fragments: usize,
    /// Generated realizations per conditioning fragment (conditionals).
    pub noise_per_seed: usize,
}

/// tau expressed in grid steps; tau must sit on the grid.
pub fn steps_per_tau(tau: f64, dt: f64) -> Result<usize> {
    if !tau.is_finite() || tau <= 0.0 || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Config(format!(
            "tau and dt must be positive, got {tau}, {dt}"
        )));
    }
    let a = tau / dt;
    let rounded = a.round();
    if rounded < 1.0 || (a - rounded).abs() > 1e-6 * rounded {
        return Err(Error::Config(format!(
            "tau = {tau} is not a positive integer multiple of dt = {dt}"
        )));
    }
    Ok(rounded as usize)
}

impl ProtocolSpec {
    fn evolving_len(&self, n_steps: usize, a: usize) -> Result<usize> {
        match self.kind {
            ProtocolKind::FullTraj => Ok(1 + (n_steps - 1) / a),
            ProtocolKind::Marginals | ProtocolKind::Conditionals => {
                if self.frag_len == 0 {
                    return Err(Error::Config("frag_len must be at least 1".into()));
                }
                if self.frag_len * a > n_steps {
                    return Err(Error::FragmentBounds(format!(
                        "fragment needs slice {} but the trajectory ends at {}",
                        self.frag_len * a,
                        n_steps
                    )));
                }
                Ok(self.frag_len)
            }
        }
    }

    /// Slice offsets of one compared fragment, relative to its anchor.
    pub fn compare_pattern(&self, n_steps: usize, dt: f64) -> Result<Vec<usize>> {
        let a = steps_per_tau(self.tau, dt)?;
        let l = self.evolving_len(n_steps, a)?;
        let mut pattern = Vec::new();
        match self.kind {
            ProtocolKind::FullTraj => {
                pattern.extend_from_slice(&[0, 1]);
                pattern.extend((0..l).map(|i| 1 + i * a));
            }
            ProtocolKind::Marginals => {
                pattern.extend_from_slice(&[0, 1]);
                pattern.extend((1..=l).map(|i| i * a));
            }
            ProtocolKind::Conditionals => {
                pattern.extend((1..=l).map(|i| i * a));
            }
        }
        Ok(pattern)
    }

    /// Steps the generator must simulate to cover one fragment.
    pub fn generator_steps(&self, n_steps: usize, dt: f64) -> Result<usize> {
        let a = steps_per_tau(self.tau, dt)?;
        Ok(match self.kind {
            ProtocolKind::FullTraj => n_steps,
            ProtocolKind::Marginals | ProtocolKind::Conditionals => {
                let l = self.evolving_len(n_steps, a)?;
                (l * a).max(SEED_SLICES)
            }
        })
    }

    /// Anchor offsets t_k in grid steps: a uniform stride covering the
    /// admissible range.
    pub fn offsets(&self, n_steps: usize, dt: f64) -> Result<Vec<usize>> {
        let a = steps_per_tau(self.tau, dt)?;
        match self.kind {
            ProtocolKind::FullTraj => Ok(vec![0]),
            ProtocolKind::Marginals | ProtocolKind::Conditionals => {
                let l = self.evolving_len(n_steps, a)?;
                let k_max = n_steps - l * a;
                let n_m = self.n_fragments;
                if n_m == 0 {
                    return Err(Error::Config("n_fragments must be at least 1".into()));
                }
                if n_m > k_max + 1 {
                    return Err(Error::FragmentBounds(format!(
                        "{n_m} fragment offsets requested but only {} fit the horizon",
                        k_max + 1
                    )));
                }
                if n_m == 1 {
                    return Ok(vec![0]);
                }
                Ok((0..n_m)
                    .map(|j| ((j * k_max) as f64 / (n_m - 1) as f64).round() as usize)
                    .collect())
            }
        }
    }
}

/// Conditioning information for one extracted fragment.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedInfo {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    /// Index of the source trajectory.
    pub source: usize,
    /// Anchor offset k in grid steps.
    pub offset: usize,
}

/// Extraction output: the compared fragments plus, fragment-aligned,
/// the seed pairs that condition them.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub batch: FragmentBatch,
    pub seeds: Vec<SeedInfo>,
}

fn flatten(traj: &Trajectory, ids: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * traj.dim);
    for &s in ids {
        out.extend_from_slice(traj.slice(s));
    }
    out
}

/// Pull fragments (and their conditioning seeds) out of observed
/// trajectories according to the protocol.
pub fn extract_fragments(trajs: &[Trajectory], spec: &ProtocolSpec) -> Result<Extraction> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidBatch("no trajectories to extract from".into()))?;
    let n_steps = first.n_steps();
    let dt = first.dt;
    let dim = first.dim;
    if trajs
        .iter()
        .any(|t| t.n_steps() != n_steps || t.dim != dim || t.dt != dt)
    {
        return Err(Error::InvalidBatch(
            "trajectories have inconsistent shapes".into(),
        ));
    }
    let pattern = spec.compare_pattern(n_steps, dt)?;
    let offsets = spec.offsets(n_steps, dt)?;

    let count = trajs.len() * offsets.len();
    let mut fragments = Vec::with_capacity(count);
    let mut slice_ids = Vec::with_capacity(count);
    let mut sources = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    for (ti, traj) in trajs.iter().enumerate() {
        for &k in &offsets {
            let ids: Vec<usize> = pattern.iter().map(|&s| s + k).collect();
            if let Some(&last) = ids.last() {
                if last > n_steps {
                    return Err(Error::FragmentBounds(format!(
                        "offset {k} pushes slice {last} past the horizon {n_steps}"
                    )));
                }
            }
            fragments.push(flatten(traj, &ids));
            slice_ids.push(ids);
            sources.push(ti);
            seeds.push(SeedInfo {
                x0: traj.slice(k).to_vec(),
                x1: traj.slice(k + 1).to_vec(),
                source: ti,
                offset: k,
            });
        }
    }
    Ok(Extraction {
        batch: FragmentBatch {
            fragments,
            origin: BatchOrigin::Data,
            pattern,
            slice_ids,
            sources,
            dim,
        },
        seeds,
    })
}

/// Start-up pairs for the generator, taken verbatim from the data
/// fragments' seed slices, each fanned out over `noise_per_seed`
/// realizations.
pub fn seed_generator_from(ext: &Extraction, spec: &ProtocolSpec) -> Result<Vec<SeedInfo>> {
    if ext.seeds.is_empty() {
        return Err(Error::MissingSeedSlices);
    }
    let reps = spec.noise_per_seed.max(1);
    let mut out = Vec::with_capacity(ext.seeds.len() * reps);
    for seed in &ext.seeds {
        for _ in 0..reps {
            out.push(seed.clone());
        }
    }
    Ok(out)
}

/// Fragment batch from generator trajectories, anchored at slice zero so
/// the slice pattern matches the data side exactly.
pub fn extract_generated(gen_trajs: &[Trajectory], spec: &ProtocolSpec) -> Result<FragmentBatch> {
    let first = gen_trajs
        .first()
        .ok_or_else(|| Error::InvalidBatch("no generated trajectories".into()))?;
    let n_steps = first.n_steps();
    let dt = first.dt;
    let dim = first.dim;
    if gen_trajs
        .iter()
        .any(|t| t.n_steps() != n_steps || t.dim != dim)
    {
        return Err(Error::InvalidBatch(
            "generated trajectories have inconsistent shapes".into(),
        ));
    }
    // For the sub-sampled protocols the generator simulates exactly the
    // fragment span, so the data-side pattern is rebuilt against a
    // horizon that yields the same evolving count.
    let pattern = match spec.kind {
        ProtocolKind::FullTraj => spec.compare_pattern(n_steps, dt)?,
        ProtocolKind::Marginals | ProtocolKind::Conditionals => {
            let a = steps_per_tau(spec.tau, dt)?;
            if spec.frag_len * a > n_steps {
                return Err(Error::FragmentBounds(format!(
                    "generator horizon {n_steps} cannot cover slice {}",
                    spec.frag_len * a
                )));
            }
            let mut pat = Vec::new();
            if spec.kind == ProtocolKind::Marginals {
                pat.extend_from_slice(&[0, 1]);
            }
            pat.extend((1..=spec.frag_len).map(|i| i * a));
            pat
        }
    };
    let fragments: Vec<Vec<f64>> = gen_trajs.iter().map(|t| flatten(t, &pattern)).collect();
    let slice_ids = vec![pattern.clone(); gen_trajs.len()];
    let sources = (0..gen_trajs.len()).collect();
    Ok(FragmentBatch {
        fragments,
        origin: BatchOrigin::Generator,
        pattern,
        slice_ids,
        sources,
        dim,
    })
}
