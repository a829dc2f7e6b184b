//! Evaluation metrics: relative parameter-recovery error and the L1
//! distance between radial histograms at a checkpoint step.

use rayon::prelude::*;

use super::config::{DataInit, RunConfig};
use super::data::draw_seed_pair;
use super::tags;
use crate::error::{Error, Result};
use crate::integrators::simulate;
use crate::model::{GenModelParams, Trajectory};
use crate::rng::{derive_seed, derive_stream};

/// |estimate - truth| / |truth|.
pub fn rel_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.abs()
}

/// Normalized radial histogram of |X(at_step)| over [0, hist_max] with
/// the given bin width; samples beyond the range land in a final
/// overflow bin that still counts toward the mass.
pub fn radial_histogram(
    trajs: &[Trajectory],
    at_step: usize,
    hist_max: f64,
    bin_width: f64,
) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::InvalidBatch("no trajectories to histogram".into()));
    }
    if trajs.iter().any(|t| t.n_steps() < at_step) {
        return Err(Error::IndexOutOfRange {
            index: at_step,
            len: trajs[0].n_steps(),
        });
    }
    let n_bins = (hist_max / bin_width).round() as usize;
    let mut hist = vec![0.0; n_bins + 1];
    for t in trajs {
        let r: f64 = t.slice(at_step).iter().map(|v| v * v).sum::<f64>().sqrt();
        let bin = ((r / bin_width) as usize).min(n_bins);
        hist[bin] += 1.0;
    }
    let total = trajs.len() as f64;
    for h in &mut hist {
        *h /= total;
    }
    Ok(hist)
}

/// Relative L1 distance between the radial distributions of two
/// ensembles at one step: sum |h_gen - h_data| / sum h_data.
pub fn l1_radial_error(
    gen_trajs: &[Trajectory],
    data_trajs: &[Trajectory],
    at_step: usize,
    hist_max: f64,
    bin_width: f64,
) -> Result<f64> {
    let hg = radial_histogram(gen_trajs, at_step, hist_max, bin_width)?;
    let hd = radial_histogram(data_trajs, at_step, hist_max, bin_width)?;
    let num: f64 = hg.iter().zip(&hd).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = hd.iter().sum();
    Ok(num / den)
}

/// Simulate an evaluation ensemble of `n` realizations over `horizon`
/// steps. Streams depend only on (master, sample), never on the model,
/// so two models evaluated with the same config share initial states
/// and driving noise; their histogram distance then reflects the model
/// mismatch rather than sampling noise.
pub fn eval_ensemble(
    params: &GenModelParams,
    init: &DataInit,
    n: usize,
    horizon: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut p = params.clone();
    p.n_steps = horizon;
    (0..n as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = derive_stream(master_seed, &[tags::EVAL_INIT, s]);
            let (x0, x1) = draw_seed_pair(init, &p, &mut rng)?;
            let seed = derive_seed(master_seed, &[tags::EVAL_SIM, s]);
            simulate(&p, &x0, &x1, seed)
        })
        .collect()
}

/// L1 radial errors of a learned model against the configured target at
/// each checkpoint step.
pub fn l1_report(cfg: &RunConfig, learned: &GenModelParams) -> Result<Vec<(usize, f64)>> {
    let target = cfg.target_params()?;
    let horizon = *cfg.eval.i_steps.iter().max().unwrap_or(&cfg.n_steps);
    let data = eval_ensemble(
        &target,
        &cfg.data.init,
        cfg.eval.n_trajs,
        horizon,
        cfg.master_seed,
    )?;
    let gen = eval_ensemble(
        learned,
        &cfg.data.init,
        cfg.eval.n_trajs,
        horizon,
        cfg.master_seed,
    )?;
    cfg.eval
        .i_steps
        .iter()
        .map(|&s| {
            Ok((
                s,
                l1_radial_error(&gen, &data, s, cfg.eval.hist_max, cfg.eval.bin_width)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ForceKind, LearnSpec};

    #[test]
    fn rel_error_definition() {
        assert!((rel_error(1.65, 1.5) - 0.1).abs() < 1e-12);
        assert_eq!(rel_error(1.5, 1.5), 0.0);
    }

    fn fake_traj(r: f64, steps: usize) -> Trajectory {
        let mut values = Vec::new();
        for _ in 0..=steps {
            values.extend_from_slice(&[r, 0.0, 0.0]);
        }
        Trajectory {
            values,
            noise: vec![0.0; steps * 3],
            dt: 1e-3,
            seed: 0,
            dim: 3,
            seeds: crate::model::SeedOrigin::Fixed,
        }
    }

    #[test]
    fn histogram_mass_is_one() {
        let trajs: Vec<Trajectory> = (0..7).map(|i| fake_traj(0.3 * i as f64, 4)).collect();
        let h = radial_histogram(&trajs, 2, 2.5, 0.05).unwrap();
        assert_eq!(h.len(), 51);
        let mass: f64 = h.iter().sum();
        assert!((mass - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn overflow_samples_count_toward_mass() {
        let trajs = vec![fake_traj(10.0, 3), fake_traj(0.1, 3)];
        let h = radial_histogram(&trajs, 1, 2.5, 0.05).unwrap();
        assert_eq!(h[50], 0.5);
        assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn identical_ensembles_have_zero_distance() {
        let trajs: Vec<Trajectory> = (0..5).map(|i| fake_traj(0.2 * i as f64, 3)).collect();
        assert_eq!(l1_radial_error(&trajs, &trajs, 2, 2.5, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_support_gives_two() {
        let a: Vec<Trajectory> = (0..4).map(|_| fake_traj(0.12, 3)).collect();
        let b: Vec<Trajectory> = (0..4).map(|_| fake_traj(1.87, 3)).collect();
        let d = l1_radial_error(&a, &b, 1, 2.5, 0.05).unwrap();
        assert!((d - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn step_beyond_horizon_is_rejected() {
        let trajs = vec![fake_traj(0.5, 3)];
        assert!(matches!(
            radial_histogram(&trajs, 9, 2.5, 0.05),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn shared_streams_give_zero_distance_for_identical_models() {
        let p = GenModelParams {
            mass: 0.1,
            gamma: 3.2,
            kbt: 0.1,
            force: ForceKind::DoubleWell {
                kappa: 1.0,
                r0: 1.0,
            },
            dt: 1e-3,
            n_steps: 20,
            dim: 3,
            learn: LearnSpec::none(),
        };
        let init = DataInit::Shell {
            r_mean: 1.0,
            r_std: 0.15,
        };
        let a = eval_ensemble(&p, &init, 32, 50, 77).unwrap();
        let b = eval_ensemble(&p, &init, 32, 50, 77).unwrap();
        assert_eq!(l1_radial_error(&a, &b, 50, 2.5, 0.05).unwrap(), 0.0);
    }
}
