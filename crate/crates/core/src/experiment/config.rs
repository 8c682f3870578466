//! Run configuration, read from TOML. Every field has a default, so an
//! empty file with only `kind` set is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{LnnArch, Scheme};
use crate::optim::{AdamConfig, LearningRates};
use crate::systems::{DatasetSpec, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Full-order Lagrangian network on a two-link pendulum.
    #[serde(rename = "lnn-2dof")]
    Lnn2Dof,
    /// Reduced-order model on the 16-DoF coupled pendulum.
    #[serde(rename = "rolnn-coupled16")]
    RolnnCoupled16,
    /// Reduced-order model on trajectories loaded from a file.
    #[serde(rename = "rolnn-ingested")]
    RolnnIngested,
}

impl ExperimentKind {
    pub fn is_reduced(self) -> bool {
        self != ExperimentKind::Lnn2Dof
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Acceleration matching.
    Acc,
    /// Velocity matching along short integrated rollouts.
    Multistep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Joint,
    /// Autoencoder terms alone for `epochs`, then latent terms alone for
    /// another `epochs` with the autoencoder frozen.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Generate data with this spec.
    pub spec: Option<DatasetSpec>,
    /// Or read training trajectories from this file.
    pub path: Option<PathBuf>,
    /// Test trajectories; taken from the end of the training file when unset.
    pub test_path: Option<PathBuf>,
    /// Trajectories held out for testing when no test file is given.
    pub test_trajectories: usize,
    /// Training samples (acceleration objective) or windows (multistep).
    pub samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            spec: None,
            path: None,
            test_path: None,
            test_trajectories: 10,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lnn: LnnArch,
    /// Autoencoder widths from the latent dimension up to the full one.
    pub ae_sizes: Vec<usize>,
    /// Slope angle of the autoencoder activations.
    pub alpha: f64,
    /// Unconstrained encoder and decoder weights with a soft penalty.
    pub overparam: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lnn: LnnArch::default(),
            ae_sizes: vec![4, 8, 16, 16, 16],
            alpha: std::f64::consts::FRAC_PI_8,
            overparam: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub schedule: Schedule,
    pub epochs: usize,
    /// Minibatch size; the whole set when unset.
    pub batch_size: Option<usize>,
    pub h_train: usize,
    pub substeps: usize,
    pub lr: LearningRates,
    /// Weight decay on the Euclidean network parameters.
    pub gamma: f64,
    /// Weight of the biorthogonality penalty of overparametrized layers.
    pub biorth_penalty: f64,
    pub adam: AdamConfig,
    /// Epochs between loss log lines on stderr.
    pub log_every: usize,
    /// Optimizer steps between projection-property checks.
    pub check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Acc,
            schedule: Schedule::Joint,
            epochs: 3000,
            batch_size: None,
            h_train: 8,
            substeps: 1,
            lr: LearningRates { ae: 5e-2, lnn: 1e-3 },
            gamma: 1e-6,
            biorth_penalty: 1e-5,
            adam: AdamConfig::default(),
            log_every: 100,
            check_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub h_test: Vec<usize>,
    pub scheme: Scheme,
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            h_test: vec![1, 8, 25, 50],
            scheme: Scheme::Rk4,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults of the given experiment.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut c = RunConfig {
            kind,
            seed: 0,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        match kind {
            ExperimentKind::Lnn2Dof => {
                let mut s = DatasetSpec::new(Mode::Unactuated, 40, 0);
                s.duration = Some(2.0);
                c.data.spec = Some(s);
            }
            ExperimentKind::RolnnCoupled16 => {
                c.data.spec = Some(DatasetSpec::new(Mode::Coupled16, 30, 0));
                c.data.samples = 24000;
                c.train.lr = LearningRates { ae: 5e-2, lnn: 1e-5 };
            }
            ExperimentKind::RolnnIngested => {
                c.model.ae_sizes = vec![10, 32, 64, 192];
            }
        }
        c
    }

    /// Parses a config, filling unset fields with the defaults of its `kind`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = text.parse().map_err(|e| cfg(&e))?;
        let kind: ExperimentKind = match user.get("kind") {
            Some(k) => k.clone().try_into().map_err(|e| cfg(&e))?,
            None => return Err(Error::Config("missing field `kind`".into())),
        };
        let mut base = toml::Table::try_from(RunConfig::new(kind)).map_err(|e| cfg(&e))?;
        if user.get("data").and_then(|d| d.get("path")).is_some() {
            if let Some(toml::Value::Table(d)) = base.get_mut("data") {
                d.remove("spec");
            }
        }
        merge(&mut base, user);
        let c: RunConfig = base.try_into().map_err(|e| cfg(&e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = RunConfig::from_toml(&text)?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        c.check_files()?;
        Ok(c)
    }

    /// Makes data paths relative to the config file absolute.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.path, &mut self.data.test_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn check_files(&self) -> Result<()> {
        for p in [&self.data.path, &self.data.test_path].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let t = &self.train;
        if t.epochs == 0 || t.h_train == 0 || t.substeps == 0 || t.check_every == 0 || t.log_every == 0 {
            return bad("epochs, h_train, substeps, check_every and log_every must be positive".into());
        }
        if t.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        if !(t.lr.ae >= 0.0 && t.lr.lnn >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(t.gamma >= 0.0 && t.biorth_penalty >= 0.0) {
            return bad("gamma and biorth_penalty must be non-negative".into());
        }
        if self.data.samples == 0 {
            return bad("data.samples must be positive".into());
        }
        if self.eval.h_test.is_empty() || self.eval.h_test.contains(&0) {
            return bad("eval.h_test needs positive horizons".into());
        }
        match (&self.data.spec, &self.data.path) {
            (Some(_), Some(_)) => return bad("set either data.spec or data.path, not both".into()),
            (None, None) => return bad("set data.spec or data.path".into()),
            (Some(s), None) => {
                s.validate()?;
                let want = match self.kind {
                    ExperimentKind::Lnn2Dof => [Mode::Unactuated, Mode::SineTracking].contains(&s.mode),
                    ExperimentKind::RolnnCoupled16 => s.mode == Mode::Coupled16,
                    ExperimentKind::RolnnIngested => false,
                };
                if !want {
                    return bad(format!("dataset mode {} does not fit this experiment", s.mode.as_str()));
                }
            }
            (None, Some(_)) => {}
        }
        if self.kind.is_reduced() {
            let s = &self.model.ae_sizes;
            if s.len() < 2 || s.windows(2).any(|w| w[0] > w[1]) || s[0] == 0 {
                return bad(format!("ae_sizes must be non-decreasing from the latent dimension, got {s:?}"));
            }
            if !(self.model.alpha > 0.0 && self.model.alpha < std::f64::consts::FRAC_PI_4) {
                return bad("alpha must lie in (0, π/4)".into());
            }
        } else if self.train.schedule == Schedule::Sequential {
            return bad("the sequential schedule needs an autoencoder".into());
        }
        Ok(())
    }
}

/// Overlays `user` on `base`. Dataset specs and mass architectures are
/// replaced as a whole since their fields depend on their variant.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if k != "spec" && k != "mass" => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
