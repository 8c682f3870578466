//! Ground-truth trajectory datasets.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{chain_accel, ChainConfig};
use super::controller::{SineReference, SineTracker};
use super::coupled::expand_rows;
use crate::error::{Error, Result};
use crate::lagrangian::{step, Scheme, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Released from rest without torques.
    Unactuated,
    /// Driven by the inverse-dynamics controller along sine references.
    SineTracking,
    /// Unactuated 4-link chain expanded to 16 DoFs.
    Coupled16,
    /// Loaded from a file produced elsewhere.
    External,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unactuated => "unactuated",
            Mode::SineTracking => "sine-tracking",
            Mode::Coupled16 => "coupled16",
            Mode::External => "external",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Mode::Unactuated, Mode::SineTracking, Mode::Coupled16, Mode::External]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub mode: Mode,
    pub trajectories: usize,
    /// Seconds per trajectory; defaults to 2, 3.5 and 3 s for the three modes.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Keep every `stride`-th simulated step.
    #[serde(default = "one")]
    pub stride: usize,
    /// Initial joint angles, degrees.
    #[serde(default = "default_q0")]
    pub q0_deg: [f64; 2],
    /// Sine reference amplitudes, degrees.
    #[serde(default = "default_amp")]
    pub amplitude_deg: [f64; 2],
    /// Sine reference frequencies, Hz.
    #[serde(default = "default_freq")]
    pub frequency_hz: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Overrides the default chain of the mode.
    #[serde(default)]
    pub chain: Option<ChainConfig>,
}

fn default_dt() -> f64 {
    1e-3
}
fn one() -> usize {
    1
}
fn default_q0() -> [f64; 2] {
    [0.0, 30.0]
}
fn default_amp() -> [f64; 2] {
    [1.0, 30.0]
}
fn default_freq() -> [f64; 2] {
    [1.0 / 15.0, 1.0]
}

impl DatasetSpec {
    pub fn new(mode: Mode, trajectories: usize, seed: u64) -> Self {
        DatasetSpec {
            mode,
            trajectories,
            duration: None,
            dt: default_dt(),
            stride: 1,
            q0_deg: default_q0(),
            amplitude_deg: default_amp(),
            frequency_hz: default_freq(),
            seed,
            chain: None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(match self.mode {
            Mode::SineTracking => 3.5,
            Mode::Coupled16 => 3.0,
            _ => 2.0,
        })
    }

    pub fn chain(&self) -> ChainConfig {
        self.chain.clone().unwrap_or_else(|| match self.mode {
            Mode::Coupled16 => ChainConfig::four_link_capsules(),
            _ => ChainConfig::double_pendulum(),
        })
    }

    /// Simulated steps per trajectory.
    pub fn steps(&self) -> usize {
        (self.duration() / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.mode == Mode::External {
            return bad("external datasets are ingested, not generated");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.trajectories == 0 || self.stride == 0 {
            return bad("trajectories and stride must be positive");
        }
        if !(self.duration() > 0.0) || self.steps() == 0 || self.steps() % self.stride != 0 {
            return bad("duration must be a positive multiple of dt * stride");
        }
        for (name, r) in [("q0_deg", self.q0_deg), ("amplitude_deg", self.amplitude_deg), ("frequency_hz", self.frequency_hz)] {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Config(format!("{name}: empty range [{}, {}]", r[0], r[1])));
            }
        }
        if self.mode == Mode::SineTracking && !(self.amplitude_deg[0] > 0.0) {
            return bad("amplitudes must be positive");
        }
        let chain = self.chain();
        chain.validate()?;
        if self.mode == Mode::Coupled16 && chain.dof() != 4 {
            return bad("coupled16 needs a 4-link chain");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub n: usize,
    pub dt: f64,
    pub mode: Mode,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Checks that every trajectory matches the header.
    pub fn new(header: DatasetHeader, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if t.dim() != header.n || t.dt != header.dt {
                return Err(Error::dim(format!("trajectory {i} does not match the dataset header")));
            }
        }
        Ok(Dataset { header, trajectories })
    }

    /// Splits off the last `count` trajectories.
    pub fn split_tail(mut self, count: usize) -> (Dataset, Dataset) {
        let at = self.trajectories.len().saturating_sub(count);
        let tail = self.trajectories.split_off(at);
        let h = self.header.clone();
        (self, Dataset { header: h, trajectories: tail })
    }
}

fn simulate(spec: &DatasetSpec, chain: &ChainConfig, index: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = chain.dof();
    let deg = std::f64::consts::PI / 180.0;
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
    let mut q = Array1::zeros(n);
    let mut dq = Array1::zeros(n);
    let tracker = match spec.mode {
        Mode::SineTracking => {
            let mut refs = Vec::with_capacity(n);
            for _ in 0..n {
                let a = uniform(&mut rng, spec.amplitude_deg) * deg;
                let f = uniform(&mut rng, spec.frequency_hz);
                let hi = spec.q0_deg[1].min(a / deg);
                let q0 = uniform(&mut rng, [spec.q0_deg[0].min(hi), hi]) * deg;
                refs.push(SineReference::through(a, f, q0)?);
            }
            let t = SineTracker::new(refs);
            let (qr, dqr, _) = t.reference(0.0);
            q = qr;
            dq = dqr;
            Some(t)
        }
        _ => {
            for x in q.iter_mut() {
                *x = uniform(&mut rng, spec.q0_deg) * deg;
            }
            None
        }
    };
    let steps = spec.steps();
    let rows = steps / spec.stride + 1;
    let mut out = [Array2::zeros((rows, n)), Array2::zeros((rows, n)), Array2::zeros((rows, n)), Array2::zeros((rows, n))];
    let dynamics = super::chain::Chain(chain);
    let as_row = |v: &Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
    for k in 0..=steps {
        let t = k as f64 * spec.dt;
        let tau = match &tracker {
            Some(c) => c.torque(chain, t, q.as_slice().unwrap(), dq.as_slice().unwrap())?,
            None => Array1::zeros(n),
        };
        if k % spec.stride == 0 {
            let r = k / spec.stride;
            let a = chain_accel(chain, q.as_slice().unwrap(), dq.as_slice().unwrap(), tau.as_slice().unwrap())?;
            out[0].row_mut(r).assign(&q);
            out[1].row_mut(r).assign(&dq);
            out[2].row_mut(r).assign(&a);
            out[3].row_mut(r).assign(&tau);
        }
        if k < steps {
            let (qn, vn, _) = step(&dynamics, &as_row(&q), &as_row(&dq), &as_row(&tau), spec.dt, Scheme::Rk4)?;
            q = qn.row(0).to_owned();
            dq = vn.row(0).to_owned();
            if q.iter().chain(dq.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!("ground-truth trajectory {index} blew up at step {k}")));
            }
        }
    }
    let [q, dq, ddq, tau] = out;
    let dt = spec.dt * spec.stride as f64;
    if spec.mode == Mode::Coupled16 {
        let (q, dq, ddq) = expand_rows(&q, &dq, &ddq);
        let rows = q.nrows();
        return Trajectory::new(dt, q, dq, ddq, Array2::zeros((rows, 16)));
    }
    Trajectory::new(dt, q, dq, ddq, tau)
}

/// Simulates all trajectories of `spec`. Each trajectory draws from its own
/// random stream, so the result does not depend on the thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let chain = spec.chain();
    let threads = std::env::var("ROLNN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, spec.trajectories);
    let mut slots: Vec<Option<Result<Trajectory>>> = (0..spec.trajectories).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = spec.trajectories.div_ceil(threads);
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let chain = &chain;
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(simulate(spec, chain, c * chunk + j));
                }
            });
        }
    });
    let trajectories = slots.into_iter().map(|s| s.expect("every slot is filled")).collect::<Result<Vec<_>>>()?;
    let n = if spec.mode == Mode::Coupled16 { 16 } else { chain.dof() };
    Dataset::new(
        DatasetHeader {
            version: FORMAT_VERSION,
            n,
            dt: spec.dt * spec.stride as f64,
            mode: spec.mode,
            seed: Some(spec.seed),
        },
        trajectories,
    )
}
