//! File formats: trajectory CSV, the binary noise sidecar, metrics CSV,
//! JSON checkpoints, and the sweep table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenModelParams, Trajectory};
use crate::optim::AdamState;

use super::sweep::SweepRow;
use super::train::MetricsRecord;

/// Trajectory positions: sample_id, step, t, x1..xd.
pub fn write_trajectories_csv(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = trajs.first().map_or(0, |t| t.dim);
    write!(w, "sample_id,step,t")?;
    for i in 1..=dim {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for (id, t) in trajs.iter().enumerate() {
        for j in 0..t.n_slices() {
            write!(w, "{id},{j},{}", j as f64 * t.dt)?;
            for v in t.slice(j) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

const NOISE_MAGIC: &[u8; 4] = b"SFNR";
const NOISE_VERSION: u32 = 1;

/// Unit-normal noise records, one block per sample, so any trajectory
/// file can be replayed exactly.
pub fn write_noise_sidecar(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = trajs.first().map_or(0, |t| t.dim) as u32;
    let n_steps = trajs.first().map_or(0, |t| t.n_steps()) as u64;
    let dt = trajs.first().map_or(0.0, |t| t.dt);
    w.write_all(NOISE_MAGIC)?;
    w.write_all(&NOISE_VERSION.to_le_bytes())?;
    w.write_all(&(trajs.len() as u64).to_le_bytes())?;
    w.write_all(&n_steps.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    for t in trajs {
        w.write_all(&t.seed.to_le_bytes())?;
        for v in &t.noise {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSidecar {
    pub n_steps: usize,
    pub dim: usize,
    pub dt: f64,
    pub records: Vec<(u64, Vec<f64>)>,
}

pub fn read_noise_sidecar(path: &Path) -> Result<NoiseSidecar> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NOISE_MAGIC {
        return Err(Error::InvalidArgument("not a noise sidecar file".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != NOISE_VERSION {
        return Err(Error::InvalidArgument(
            "unsupported noise sidecar version".into(),
        ));
    }
    r.read_exact(&mut u64buf)?;
    let n_samples = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let n_steps = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u64buf)?;
    let dt = f64::from_le_bytes(u64buf);
    let mut records = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let mut noise = Vec::with_capacity(n_steps * dim);
        for _ in 0..n_steps * dim {
            r.read_exact(&mut u64buf)?;
            noise.push(f64::from_le_bytes(u64buf));
        }
        records.push((seed, noise));
    }
    Ok(NoiseSidecar {
        n_steps,
        dim,
        dt,
        records,
    })
}

/// Per-epoch metrics: epoch, loss, then the tracked channel values.
pub fn write_metrics_csv(path: &Path, m: &MetricsRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "epoch,loss")?;
    for n in &m.value_names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for row in &m.rows {
        write!(w, "{},{}", row.epoch, row.loss)?;
        for v in &row.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub master_seed: u64,
    pub run: u64,
    pub params: GenModelParams,
    pub adam: AdamState,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, ckpt)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Sweep table: method, tau, then mean/std per metric column.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<String> = rows
        .first()
        .map(|r| r.stats.iter().map(|(n, _, _)| n.clone()).collect())
        .unwrap_or_default();
    write!(w, "method,tau")?;
    for n in &names {
        write!(w, ",{n}_mean,{n}_std")?;
    }
    writeln!(w)?;
    for row in rows {
        write!(w, "{:?},{}", row.protocol, row.tau)?;
        for (_, mean, std) in &row.stats {
            write!(w, ",{mean},{std}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// L1 evaluation table: i_step, l1.
pub fn write_eval_csv(path: &Path, entries: &[(usize, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i_step,l1")?;
    for (s, v) in entries {
        writeln!(w, "{s},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::simulate;
    use crate::model::{ForceKind, LearnSpec};

    fn trajs() -> Vec<Trajectory> {
        let p = GenModelParams {
            mass: 0.1,
            gamma: 3.2,
            kbt: 0.1,
            force: ForceKind::Linear {
                stiffness: 1.5,
                const_force: vec![0.0; 2],
            },
            dt: 1e-3,
            n_steps: 6,
            dim: 2,
            learn: LearnSpec::none(),
        };
        (0..3)
            .map(|i| simulate(&p, &[0.01 * i as f64, 0.0], &[0.01, 0.002], 40 + i).unwrap())
            .collect()
    }

    #[test]
    fn noise_sidecar_roundtrips() {
        let dir = std::env::temp_dir().join("stochfit_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("noise.bin");
        let ts = trajs();
        write_noise_sidecar(&path, &ts).unwrap();
        let rd = read_noise_sidecar(&path).unwrap();
        assert_eq!(rd.dim, 2);
        assert_eq!(rd.n_steps, 6);
        assert_eq!(rd.records.len(), 3);
        for (t, (seed, noise)) in ts.iter().zip(&rd.records) {
            assert_eq!(t.seed, *seed);
            assert_eq!(&t.noise, noise);
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn trajectory_csv_has_expected_shape() {
        let dir = std::env::temp_dir().join("stochfit_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trajs.csv");
        let ts = trajs();
        write_trajectories_csv(&path, &ts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sample_id,step,t,x1,x2");
        assert_eq!(lines.len(), 1 + 3 * 7);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn checkpoint_roundtrips() {
        let dir = std::env::temp_dir().join("stochfit_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        let p = GenModelParams {
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
            learn: LearnSpec::none(),
        };
        let ckpt = Checkpoint {
            epoch: 12,
            master_seed: 7,
            run: 1,
            params: p,
            adam: AdamState::new(3, 1e-2),
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let rd = read_checkpoint(&path).unwrap();
        assert_eq!(rd.epoch, 12);
        assert_eq!(rd.params, ckpt.params);
        assert_eq!(rd.adam, ckpt.adam);
        std::fs::remove_file(path).ok();
    }
}
