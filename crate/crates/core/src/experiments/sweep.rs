//! Cartesian sweep over protocols and tau values, aggregating final
//! metrics as mean and sample standard deviation over independent runs.

use super::config::{ExperimentKind, RunConfig};
use super::eval::l1_report;
use super::train::run_training;
use crate::error::Result;
use crate::protocols::{steps_per_tau, ProtocolKind};

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub protocol: ProtocolKind,
    /// Tau actually used (snapped to the grid).
    pub tau: f64,
    /// (metric name, mean over runs, sample std over runs).
    pub stats: Vec<(String, f64, f64)>,
}

/// Mean and sample standard deviation (n-1 denominator; zero for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fit the configured fragment geometry to a new tau, shrinking the
/// evolving length and offset count where the horizon demands it.
fn adapt_protocol(cfg: &RunConfig, kind: ProtocolKind, tau: f64) -> Result<RunConfig> {
    let mut out = cfg.clone();
    let a = {
        let raw = tau / cfg.dt;
        let snapped = raw.round().max(1.0);
        snapped as usize
    };
    out.protocol.kind = kind;
    out.protocol.tau = a as f64 * cfg.dt;
    if matches!(kind, ProtocolKind::Marginals | ProtocolKind::Conditionals) {
        let l_max = cfg.n_steps / a;
        out.protocol.frag_len = cfg.protocol.frag_len.clamp(1, l_max.max(1));
        let k_max = cfg.n_steps - out.protocol.frag_len * a;
        out.protocol.n_fragments = cfg.protocol.n_fragments.clamp(1, k_max + 1);
    }
    steps_per_tau(out.protocol.tau, out.dt)?;
    out.protocol.compare_pattern(out.n_steps, out.dt)?;
    Ok(out)
}

/// Per-run final metric values for one configuration.
fn run_metrics(cfg: &RunConfig, run: u64) -> Result<Vec<(String, f64)>> {
    let out = run_training(cfg, run)?;
    match cfg.experiment {
        ExperimentKind::OuRecovery => Ok(out
            .metrics
            .final_rel_errors
            .iter()
            .map(|(n, v)| (format!("eps_{n}"), *v))
            .collect()),
        ExperimentKind::ForceLaw => Ok(l1_report(cfg, &out.final_params)?
            .into_iter()
            .map(|(step, v)| (format!("l1_step{step}"), v))
            .collect()),
    }
}

/// Run the full sweep grid from the config's sweep section.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &kind in &cfg.sweep.protocols {
        for &tau in &cfg.sweep.taus {
            let combo = adapt_protocol(cfg, kind, tau)?;
            let mut per_metric: Vec<(String, Vec<f64>)> = Vec::new();
            for run in 0..cfg.runs as u64 {
                for (name, value) in run_metrics(&combo, run)? {
                    match per_metric.iter_mut().find(|(n, _)| *n == name) {
                        Some((_, vs)) => vs.push(value),
                        None => per_metric.push((name, vec![value])),
                    }
                }
            }
            rows.push(SweepRow {
                protocol: kind,
                tau: combo.protocol.tau,
                stats: per_metric
                    .into_iter()
                    .map(|(name, vs)| {
                        let (mean, std) = mean_std(&vs);
                        (name, mean, std)
                    })
                    .collect(),
            });
        }
    }
    Ok(rows)
}
