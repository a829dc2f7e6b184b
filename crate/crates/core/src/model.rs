//! Generative-model parameters, the learnable-channel mapping, and the
//! trajectory record produced by the integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::MlpSpec;

/// Force law attached to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceKind {
    /// F(x) = -K0 x + F0.
    Linear {
        stiffness: f64,
        const_force: Vec<f64>,
    },
    /// Radial double well F(r) e_r with F(r) = -4 kappa r (r^2 - r0^2).
    /// Used as a ground-truth target; not learnable.
    DoubleWell { kappa: f64, r0: f64 },
    /// Radial network force F(r; theta) e_r.
    Neural { spec: MlpSpec, theta: Vec<f64> },
}

/// Learnable channels. Scalar physical channels are optimized in log
/// space so they stay positive; network weights and constant forces are
/// optimized directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Stiffness,
    Damping,
    Temperature,
    ConstForce(usize),
    NeuralWeights,
}

impl Channel {
    pub fn is_log(self) -> bool {
        matches!(
            self,
            Channel::Stiffness | Channel::Damping | Channel::Temperature
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnSpec {
    pub channels: Vec<Channel>,
}

impl LearnSpec {
    pub fn new(channels: Vec<Channel>) -> Self {
        Self { channels }
    }

    pub fn none() -> Self {
        Self {
            channels: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenModelParams {
    pub mass: f64,
    pub gamma: f64,
    pub kbt: f64,
    pub force: ForceKind,
    pub dt: f64,
    pub n_steps: usize,
    pub dim: usize,
    pub learn: LearnSpec,
}

impl GenModelParams {
    /// Noise strength sqrt(2 kBT gamma).
    pub fn sigma(&self) -> f64 {
        (2.0 * self.kbt * self.gamma).sqrt()
    }

    pub fn n_slices(&self) -> usize {
        self.n_steps + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mass.is_finite() || self.mass <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mass must be positive, got {}",
                self.mass
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.gamma < 0.0 || self.kbt < 0.0 {
            return Err(Error::InvalidArgument(
                "gamma and kbt must be non-negative".into(),
            ));
        }
        if self.n_steps < 2 {
            return Err(Error::InvalidArgument(
                "n_steps must be at least the scheme order (2)".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        match &self.force {
            ForceKind::Linear { const_force, .. } => {
                if const_force.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: const_force.len(),
                    });
                }
            }
            ForceKind::DoubleWell { .. } => {}
            ForceKind::Neural { spec, theta } => {
                if theta.len() != spec.param_count() {
                    return Err(Error::LengthMismatch {
                        expected: spec.param_count(),
                        got: theta.len(),
                    });
                }
            }
        }
        for ch in &self.learn.channels {
            match ch {
                Channel::Stiffness | Channel::ConstForce(_) => {
                    if !matches!(self.force, ForceKind::Linear { .. }) {
                        return Err(Error::Config(
                            "stiffness/const-force channels require a linear force model".into(),
                        ));
                    }
                    if let (Channel::ConstForce(i), ForceKind::Linear { const_force, .. }) =
                        (ch, &self.force)
                    {
                        if *i >= const_force.len() {
                            return Err(Error::IndexOutOfRange {
                                index: *i,
                                len: const_force.len(),
                            });
                        }
                    }
                }
                Channel::NeuralWeights => {
                    if !matches!(self.force, ForceKind::Neural { .. }) {
                        return Err(Error::Config(
                            "neural-weights channel requires a neural force model".into(),
                        ));
                    }
                }
                Channel::Damping | Channel::Temperature => {}
            }
            if ch.is_log() && self.channel_value_sum(*ch) <= 0.0 {
                return Err(Error::Config(format!(
                    "channel {} is optimized in log space and must start positive",
                    channel_name(*ch, 0)
                )));
            }
        }
        Ok(())
    }

    fn channel_value_sum(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Stiffness => match &self.force {
                ForceKind::Linear { stiffness, .. } => *stiffness,
                _ => f64::NAN,
            },
            Channel::Damping => self.gamma,
            Channel::Temperature => self.kbt,
            _ => f64::NAN,
        }
    }

    fn channel_width(&self, ch: Channel) -> usize {
        match ch {
            Channel::NeuralWeights => match &self.force {
                ForceKind::Neural { theta, .. } => theta.len(),
                _ => 0,
            },
            _ => 1,
        }
    }

    /// Length of the flat learnable vector.
    pub fn n_learnable(&self) -> usize {
        self.learn
            .channels
            .iter()
            .map(|&ch| self.channel_width(ch))
            .sum()
    }

    /// Pack learnable channels into a flat vector (log space where
    /// applicable).
    pub fn pack_learnable(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.n_learnable());
        for &ch in &self.learn.channels {
            match ch {
                Channel::Stiffness => {
                    if let ForceKind::Linear { stiffness, .. } = &self.force {
                        q.push(stiffness.ln());
                    }
                }
                Channel::Damping => q.push(self.gamma.ln()),
                Channel::Temperature => q.push(self.kbt.ln()),
                Channel::ConstForce(i) => {
                    if let ForceKind::Linear { const_force, .. } = &self.force {
                        q.push(const_force[i]);
                    }
                }
                Channel::NeuralWeights => {
                    if let ForceKind::Neural { theta, .. } = &self.force {
                        q.extend_from_slice(theta);
                    }
                }
            }
        }
        q
    }

    /// Write a flat learnable vector back into the parameter record.
    pub fn unpack_learnable(&mut self, q: &[f64]) -> Result<()> {
        let expected = self.n_learnable();
        if q.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: q.len(),
            });
        }
        let channels = self.learn.channels.clone();
        let mut off = 0;
        for ch in channels {
            let w = self.channel_width(ch);
            let seg = &q[off..off + w];
            match ch {
                Channel::Stiffness => {
                    if let ForceKind::Linear { stiffness, .. } = &mut self.force {
                        *stiffness = seg[0].exp();
                    }
                }
                Channel::Damping => self.gamma = seg[0].exp(),
                Channel::Temperature => self.kbt = seg[0].exp(),
                Channel::ConstForce(i) => {
                    if let ForceKind::Linear { const_force, .. } = &mut self.force {
                        const_force[i] = seg[0];
                    }
                }
                Channel::NeuralWeights => {
                    if let ForceKind::Neural { theta, .. } = &mut self.force {
                        theta.copy_from_slice(seg);
                    }
                }
            }
            off += w;
        }
        Ok(())
    }

    /// Chain a physical-space gradient into learnable coordinates:
    /// log-space channels pick up a factor of the current value.
    pub fn grad_to_learnable(&self, grad_phys: &[f64]) -> Result<Vec<f64>> {
        let expected = self.n_learnable();
        if grad_phys.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: grad_phys.len(),
            });
        }
        let mut g = grad_phys.to_vec();
        let mut off = 0;
        for &ch in &self.learn.channels {
            let w = self.channel_width(ch);
            if ch.is_log() {
                g[off] *= self.channel_value_sum(ch);
            }
            off += w;
        }
        Ok(g)
    }

    /// Human-readable names for the flat learnable vector entries.
    pub fn learnable_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_learnable());
        for &ch in &self.learn.channels {
            let w = self.channel_width(ch);
            for i in 0..w {
                names.push(channel_name(ch, i));
            }
        }
        names
    }

    /// Current physical values of the learnable scalar channels, with
    /// names. Skips network weights.
    pub fn scalar_channel_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for &ch in &self.learn.channels {
            match ch {
                Channel::Stiffness => {
                    if let ForceKind::Linear { stiffness, .. } = &self.force {
                        out.push(("k0".to_string(), *stiffness));
                    }
                }
                Channel::Damping => out.push(("gamma".to_string(), self.gamma)),
                Channel::Temperature => out.push(("kbt".to_string(), self.kbt)),
                Channel::ConstForce(i) => {
                    if let ForceKind::Linear { const_force, .. } = &self.force {
                        out.push((format!("f0_{i}"), const_force[i]));
                    }
                }
                Channel::NeuralWeights => {}
            }
        }
        out
    }
}

pub fn channel_name(ch: Channel, idx: usize) -> String {
    match ch {
        Channel::Stiffness => "k0".to_string(),
        Channel::Damping => "gamma".to_string(),
        Channel::Temperature => "kbt".to_string(),
        Channel::ConstForce(i) => format!("f0_{i}"),
        Channel::NeuralWeights => format!("theta_{idx}"),
    }
}

/// Where a trajectory's two start-up slices came from. Fixed seeds are
/// constants with respect to the parameters; model-sampled seeds are
/// reparameterized equilibrium draws and contribute seed-row terms to
/// the gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum SeedOrigin {
    Fixed,
    ModelEquilibrium { z_pos: Vec<f64>, z_vel: Vec<f64> },
}

/// One realization of the model: positions plus the unit-normal draws
/// that generated them, so a path can be replayed or differentiated
/// through exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// (n_steps + 1) slices of `dim` values, flattened slice-major.
    pub values: Vec<f64>,
    /// n_steps unit-normal d-vectors; entry j-1 is the draw for eta_j.
    pub noise: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
    pub dim: usize,
    pub seeds: SeedOrigin,
}

impl Trajectory {
    pub fn n_slices(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_slices() - 1
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Unit normals behind eta_j, j in 1..=n_steps.
    pub fn noise_slice(&self, j: usize) -> &[f64] {
        debug_assert!(j >= 1);
        &self.noise[(j - 1) * self.dim..j * self.dim]
    }
}
