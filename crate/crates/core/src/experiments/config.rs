//! Run configuration: a TOML file describing the experiment, the target
//! and trainee models, the protocol, and the optimizer settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::mlp::MlpSpec;
use crate::model::{Channel, ForceKind, GenModelParams, LearnSpec};
use crate::protocols::{ProtocolKind, ProtocolSpec};
use crate::rng::derive_stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OuRecovery,
    ForceLaw,
}

/// Initial-condition rule for ground-truth trajectories. Velocities are
/// thermal draws at the target temperature except for `origin_rest`,
/// and the second start-up slice is x0 + dt * v0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataInit {
    /// Both start-up slices at the origin.
    OriginRest,
    /// Positions from the harmonic equilibrium density (linear force
    /// targets only).
    Equilibrium,
    /// Positions on a randomly oriented shell of radius N(r_mean, r_std).
    Shell { r_mean: f64, r_std: f64 },
    /// Fixed initial position.
    Point { x: Vec<f64> },
}

/// Where the generator's start-up slices come from during training.
/// Conditionals always copy the conditioning fragment regardless of
/// this setting; that is what makes them conditionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Copy the two seed slices of the paired data fragment.
    FromData,
    /// Sample from the trainee's own equilibrium (linear models); the
    /// seed scales then carry gradient, which is what exposes the
    /// stiffness and temperature to the loss.
    ModelEquilibrium,
}

/// Force law as written in a config file; network weights materialize at
/// run start from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceConfig {
    Linear {
        stiffness: f64,
        #[serde(default)]
        const_force: Option<Vec<f64>>,
    },
    DoubleWell {
        kappa: f64,
        r0: f64,
    },
    Neural {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_slope")]
        leaky_slope: f64,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![100, 100, 100]
}

fn default_slope() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the initial rate reached at the final epoch under a
    /// linear schedule; 1.0 keeps the rate constant.
    pub lr_decay_to: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay_to: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_trajs: usize,
    pub init: DataInit,
    /// Draw a fresh observation batch every epoch instead of cycling a
    /// fixed pool. Statistically this is training against a data set of
    /// size epochs x batch.
    pub resample: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Data fragments drawn per epoch (the generator matches them one
    /// for one, times noise_per_seed for conditionals).
    pub batch_fragments: usize,
    pub seed_mode: SeedMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_trajs: usize,
    pub i_steps: Vec<usize>,
    pub hist_max: f64,
    pub bin_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trajs: 1024,
            i_steps: vec![50, 100, 200],
            hist_max: 2.5,
            bin_width: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub protocols: Vec<ProtocolKind>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub epochs: usize,
    pub runs: usize,
    pub dim: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub mass: f64,
    pub target_gamma: f64,
    pub target_kbt: f64,
    pub target_force: ForceConfig,
    pub trainee_gamma: f64,
    pub trainee_kbt: f64,
    pub trainee_force: ForceConfig,
    pub learn: Vec<String>,
    pub kernel: KernelConfig,
    pub protocol: ProtocolSpec,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Ground-truth model; nothing learnable.
    pub fn target_params(&self) -> Result<GenModelParams> {
        let force = self.materialize_force(&self.target_force, 0)?;
        let p = GenModelParams {
            mass: self.mass,
            gamma: self.target_gamma,
            kbt: self.target_kbt,
            force,
            dt: self.dt,
            n_steps: self.n_steps,
            dim: self.dim,
            learn: LearnSpec::none(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Trainee starting point for one run; network weights draw from the
    /// run-tagged stream.
    pub fn trainee_params(&self, run: u64) -> Result<GenModelParams> {
        let force = self.materialize_force(&self.trainee_force, run)?;
        let mut channels = Vec::new();
        for name in &self.learn {
            channels.push(match name.as_str() {
                "stiffness" => Channel::Stiffness,
                "damping" => Channel::Damping,
                "temperature" => Channel::Temperature,
                "neural" => Channel::NeuralWeights,
                other => {
                    return Err(Error::Config(format!(
                        "unknown learnable channel `{other}`"
                    )))
                }
            });
        }
        let p = GenModelParams {
            mass: self.mass,
            gamma: self.trainee_gamma,
            kbt: self.trainee_kbt,
            force,
            dt: self.dt,
            n_steps: self.n_steps,
            dim: self.dim,
            learn: LearnSpec::new(channels),
        };
        p.validate()?;
        Ok(p)
    }

    fn materialize_force(&self, fc: &ForceConfig, run: u64) -> Result<ForceKind> {
        Ok(match fc {
            ForceConfig::Linear {
                stiffness,
                const_force,
            } => ForceKind::Linear {
                stiffness: *stiffness,
                const_force: const_force.clone().unwrap_or_else(|| vec![0.0; self.dim]),
            },
            ForceConfig::DoubleWell { kappa, r0 } => ForceKind::DoubleWell {
                kappa: *kappa,
                r0: *r0,
            },
            ForceConfig::Neural {
                hidden,
                leaky_slope,
            } => {
                let spec = MlpSpec::scalar_net(hidden, *leaky_slope)?;
                let mut rng = derive_stream(self.master_seed, &[super::tags::THETA_INIT, run]);
                let theta = spec.init_weights(&mut rng);
                ForceKind::Neural { spec, theta }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.target_params()?;
        self.trainee_params(0)?;
        if self.epochs == 0 || self.runs == 0 {
            return Err(Error::Config("epochs and runs must be positive".into()));
        }
        if self.train.batch_fragments < 2 {
            return Err(Error::Config("batch_fragments must be at least 2".into()));
        }
        if self.data.n_trajs == 0 {
            return Err(Error::Config("data.n_trajs must be positive".into()));
        }
        if let DataInit::Equilibrium = self.data.init {
            match &self.target_force {
                ForceConfig::Linear { stiffness, .. } if *stiffness > 0.0 => {}
                _ => {
                    return Err(Error::Config(
                        "equilibrium init needs a linear target with positive stiffness".into(),
                    ))
                }
            }
        }
        if let DataInit::Point { x } = &self.data.init {
            if x.len() != self.dim {
                return Err(Error::Config("point init has the wrong dimension".into()));
            }
        }
        if cfg_model_seeded(self) {
            match &self.trainee_force {
                ForceConfig::Linear { stiffness, .. } if *stiffness > 0.0 => {}
                _ => {
                    return Err(Error::Config(
                        "model-equilibrium seeding needs a linear trainee force with \
                         positive stiffness"
                            .into(),
                    ))
                }
            }
        }
        // Protocol geometry must fit the data horizon.
        self.protocol.compare_pattern(self.n_steps, self.dt)?;
        self.protocol.offsets(self.n_steps, self.dt)?;
        if self.eval.hist_max <= 0.0 || self.eval.bin_width <= 0.0 {
            return Err(Error::Config(
                "eval histogram range and bin width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Full-trajectory recovery of the three physical parameters of the
    /// harmonic target, at desk scale.
    pub fn ou_default() -> Self {
        Self {
            experiment: ExperimentKind::OuRecovery,
            master_seed: 7,
            epochs: 3000,
            runs: 4,
            dim: 3,
            dt: 1e-3,
            n_steps: 18,
            mass: 0.1,
            target_gamma: 3.2,
            target_kbt: 0.1,
            target_force: ForceConfig::Linear {
                stiffness: 1.5,
                const_force: None,
            },
            trainee_gamma: 6.4,
            trainee_kbt: 0.2,
            trainee_force: ForceConfig::Linear {
                stiffness: 3.0,
                const_force: None,
            },
            learn: vec!["stiffness".into(), "damping".into(), "temperature".into()],
            kernel: KernelConfig::default(),
            protocol: ProtocolSpec {
                kind: ProtocolKind::FullTraj,
                tau: 1.7e-2,
                frag_len: 1,
                n_fragments: 1,
                noise_per_seed: 1,
            },
            optim: OptimConfig {
                lr: 2e-2,
                lr_decay_to: 0.01,
                ..OptimConfig::default()
            },
            data: DataConfig {
                n_trajs: 1024,
                init: DataInit::Equilibrium,
                resample: true,
            },
            train: TrainConfig {
                batch_fragments: 256,
                seed_mode: SeedMode::FromData,
            },
            eval: EvalConfig::default(),
            sweep: SweepConfig {
                taus: vec![1.7e-2, 1.19e-2, 5.83e-3, 4.08e-3, 2.86e-3, 2.0e-3],
                protocols: vec![
                    ProtocolKind::FullTraj,
                    ProtocolKind::Marginals,
                    ProtocolKind::Conditionals,
                ],
            },
            output_dir: PathBuf::from("runs/ou"),
        }
    }

    /// Radial force-law learning against the double-well target.
    pub fn force_law_default() -> Self {
        Self {
            experiment: ExperimentKind::ForceLaw,
            master_seed: 11,
            epochs: 5000,
            runs: 1,
            dim: 3,
            dt: 1e-3,
            n_steps: 20,
            mass: 0.1,
            target_gamma: 3.2,
            target_kbt: 0.1,
            target_force: ForceConfig::DoubleWell {
                kappa: 1.0,
                r0: 1.0,
            },
            trainee_gamma: 3.2,
            trainee_kbt: 0.1,
            trainee_force: ForceConfig::Neural {
                hidden: vec![100, 100, 100],
                leaky_slope: 0.01,
            },
            learn: vec!["neural".into()],
            kernel: KernelConfig::default(),
            protocol: ProtocolSpec {
                kind: ProtocolKind::Marginals,
                tau: 1.9e-2,
                frag_len: 1,
                n_fragments: 2,
                noise_per_seed: 1,
            },
            optim: OptimConfig {
                lr: 1e-3,
                ..OptimConfig::default()
            },
            data: DataConfig {
                n_trajs: 256,
                init: DataInit::Shell {
                    r_mean: 1.0,
                    r_std: 0.15,
                },
                resample: true,
            },
            train: TrainConfig {
                batch_fragments: 64,
                seed_mode: SeedMode::FromData,
            },
            eval: EvalConfig::default(),
            sweep: SweepConfig {
                taus: vec![1.9e-2, 1.16e-2, 7.12e-3],
                protocols: vec![
                    ProtocolKind::FullTraj,
                    ProtocolKind::Marginals,
                    ProtocolKind::Conditionals,
                ],
            },
            output_dir: PathBuf::from("runs/force_law"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let base = match raw.experiment.kind {
            ExperimentKind::OuRecovery => Self::ou_default(),
            ExperimentKind::ForceLaw => Self::force_law_default(),
        };
        let cfg = raw.onto(base)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// Raw mirror: every section optional on top of the experiment defaults.

#[derive(Deserialize)]
struct RawConfig {
    experiment: RawExperiment,
    #[serde(default)]
    model: Option<RawModel>,
    #[serde(default)]
    kernel: Option<RawKernel>,
    #[serde(default)]
    protocol: Option<RawProtocol>,
    #[serde(default)]
    optim: Option<RawOptim>,
    #[serde(default)]
    data: Option<RawData>,
    #[serde(default)]
    train: Option<RawTrain>,
    #[serde(default)]
    eval: Option<RawEval>,
    #[serde(default)]
    sweep: Option<RawSweep>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
struct RawExperiment {
    kind: ExperimentKind,
    master_seed: Option<u64>,
    epochs: Option<usize>,
    runs: Option<usize>,
}

#[derive(Deserialize)]
struct RawModel {
    dim: Option<usize>,
    dt: Option<f64>,
    n_steps: Option<usize>,
    mass: Option<f64>,
    target: Option<RawModelSide>,
    trainee: Option<RawModelSide>,
}

#[derive(Deserialize)]
struct RawModelSide {
    gamma: Option<f64>,
    kbt: Option<f64>,
    force: Option<ForceConfig>,
    learn: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RawKernel {
    alpha: Option<f64>,
    length_scale: Option<f64>,
}

#[derive(Deserialize)]
struct RawProtocol {
    kind: Option<ProtocolKind>,
    tau: Option<f64>,
    frag_len: Option<usize>,
    n_fragments: Option<usize>,
    noise_per_seed: Option<usize>,
}

#[derive(Deserialize)]
struct RawOptim {
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    lr_decay_to: Option<f64>,
}

#[derive(Deserialize)]
struct RawData {
    n_trajs: Option<usize>,
    init: Option<DataInit>,
    resample: Option<bool>,
}

#[derive(Deserialize)]
struct RawTrain {
    batch_fragments: Option<usize>,
    seed_mode: Option<SeedMode>,
}

#[derive(Deserialize)]
struct RawEval {
    n_trajs: Option<usize>,
    i_steps: Option<Vec<usize>>,
    hist_max: Option<f64>,
    bin_width: Option<f64>,
}

#[derive(Deserialize)]
struct RawSweep {
    taus: Option<Vec<f64>>,
    protocols: Option<Vec<ProtocolKind>>,
}

#[derive(Deserialize)]
struct RawOutput {
    dir: Option<PathBuf>,
}

impl RawConfig {
    fn onto(self, mut cfg: RunConfig) -> Result<RunConfig> {
        cfg.experiment = self.experiment.kind;
        set(&mut cfg.master_seed, self.experiment.master_seed);
        set(&mut cfg.epochs, self.experiment.epochs);
        set(&mut cfg.runs, self.experiment.runs);
        if let Some(m) = self.model {
            set(&mut cfg.dim, m.dim);
            set(&mut cfg.dt, m.dt);
            set(&mut cfg.n_steps, m.n_steps);
            set(&mut cfg.mass, m.mass);
            if let Some(t) = m.target {
                set(&mut cfg.target_gamma, t.gamma);
                set(&mut cfg.target_kbt, t.kbt);
                set(&mut cfg.target_force, t.force);
                if t.learn.is_some() {
                    return Err(Error::Config("the target model is never learnable".into()));
                }
            }
            if let Some(t) = m.trainee {
                set(&mut cfg.trainee_gamma, t.gamma);
                set(&mut cfg.trainee_kbt, t.kbt);
                set(&mut cfg.trainee_force, t.force);
                set(&mut cfg.learn, t.learn);
            }
        }
        if let Some(k) = self.kernel {
            set(&mut cfg.kernel.alpha, k.alpha);
            set(&mut cfg.kernel.length_scale, k.length_scale);
            cfg.kernel = KernelConfig::new(cfg.kernel.alpha, cfg.kernel.length_scale)?;
        }
        if let Some(p) = self.protocol {
            set(&mut cfg.protocol.kind, p.kind);
            set(&mut cfg.protocol.tau, p.tau);
            set(&mut cfg.protocol.frag_len, p.frag_len);
            set(&mut cfg.protocol.n_fragments, p.n_fragments);
            set(&mut cfg.protocol.noise_per_seed, p.noise_per_seed);
        }
        if let Some(o) = self.optim {
            set(&mut cfg.optim.lr, o.lr);
            set(&mut cfg.optim.beta1, o.beta1);
            set(&mut cfg.optim.beta2, o.beta2);
            set(&mut cfg.optim.eps, o.eps);
            set(&mut cfg.optim.lr_decay_to, o.lr_decay_to);
        }
        if let Some(d) = self.data {
            set(&mut cfg.data.n_trajs, d.n_trajs);
            set(&mut cfg.data.init, d.init);
            set(&mut cfg.data.resample, d.resample);
        }
        if let Some(t) = self.train {
            set(&mut cfg.train.batch_fragments, t.batch_fragments);
            set(&mut cfg.train.seed_mode, t.seed_mode);
        }
        if let Some(e) = self.eval {
            set(&mut cfg.eval.n_trajs, e.n_trajs);
            set(&mut cfg.eval.i_steps, e.i_steps);
            set(&mut cfg.eval.hist_max, e.hist_max);
            set(&mut cfg.eval.bin_width, e.bin_width);
        }
        if let Some(s) = self.sweep {
            set(&mut cfg.sweep.taus, s.taus);
            set(&mut cfg.sweep.protocols, s.protocols);
        }
        if let Some(o) = self.output {
            set(&mut cfg.output_dir, o.dir);
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Whether this config trains with model-sampled start-up slices
/// anywhere (conditionals always copy seeds, so they don't count).
fn cfg_model_seeded(cfg: &RunConfig) -> bool {
    cfg.train.seed_mode == SeedMode::ModelEquilibrium
        && cfg.protocol.kind != crate::protocols::ProtocolKind::Conditionals
}
