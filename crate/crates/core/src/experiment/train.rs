//! Training loops and checkpoints.

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentKind, Objective, RunConfig, Schedule};
use crate::diffengine::{gradient, Bound, Tape};
use crate::error::{Error, Result};
use crate::lagrangian::{lnn_acc_loss, lnn_multistep_loss, LagrangianModel, LossReport, Samples, Trajectory, Windows};
use crate::manifolds::ProductPoint;
use crate::networks::AeActivation;
use crate::optim::{LearningRates, RiemannianAdam};
use crate::rom::{rolnn_acc_loss, rolnn_ode_loss, Active, RolnnModel, RomLossWeights};
use crate::systems::{generate_dataset, ingest_trajectories, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Model {
    Lnn(LagrangianModel),
    Rolnn(RolnnModel),
}

impl Model {
    /// Dimension of the data the model consumes.
    pub fn full_dim(&self) -> usize {
        match self {
            Model::Lnn(m) => m.n,
            Model::Rolnn(m) => m.full_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum Status {
    Running,
    Completed,
    /// Training stopped at a numerical failure; parameters are the last good ones.
    Diverged { epoch: usize, message: String },
}

/// Everything needed to evaluate a model or to resume its training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub params: ProductPoint,
    pub optimizer: RiemannianAdam,
    /// Epochs completed, counting both phases of a sequential schedule.
    pub epoch: usize,
    pub steps: u64,
    pub status: Status,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub total: f64,
    pub diverged_rows: usize,
}

/// Largest deviation of `ρ∘φ` from the identity and of `dρ∘dφ` from `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    pub step: u64,
    pub position: f64,
    pub jacobian: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub projection: Vec<ProjectionCheck>,
}

/// Training and test trajectories of a run.
pub struct RunData {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    let mut ds = match (&cfg.data.spec, &cfg.data.path) {
        (Some(spec), _) => generate_dataset(spec)?,
        (None, Some(path)) => ingest_trajectories(path, Schema::default())?,
        (None, None) => return Err(Error::Config("no data source configured".into())),
    };
    let test = match &cfg.data.test_path {
        Some(p) => ingest_trajectories(p, Schema { n: Some(ds.header.n), dt: Some(ds.header.dt) })?.trajectories,
        None => {
            if ds.trajectories.len() <= cfg.data.test_trajectories {
                return Err(Error::Config(format!(
                    "dataset has {} trajectories, cannot hold out {} for testing",
                    ds.trajectories.len(),
                    cfg.data.test_trajectories
                )));
            }
            let (train, test) = ds.split_tail(cfg.data.test_trajectories);
            ds = train;
            test.trajectories
        }
    };
    let want = match cfg.kind {
        ExperimentKind::Lnn2Dof => None,
        _ => cfg.model.ae_sizes.last().copied(),
    };
    if let Some(n) = want {
        if n != ds.header.n {
            return Err(Error::Config(format!("autoencoder output width {n} does not match {} data DoFs", ds.header.n)));
        }
    }
    Ok(RunData { train: ds.trajectories, test })
}

/// Fresh model and parameters for `cfg` on data with `n` DoFs.
pub fn build_model(cfg: &RunConfig, n: usize) -> Result<(Model, ProductPoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ProductPoint::new();
    let model = if cfg.kind.is_reduced() {
        let act = AeActivation::smooth(cfg.model.alpha)?;
        Model::Rolnn(RolnnModel::new(&mut params, &cfg.model.ae_sizes, act, cfg.model.overparam, &cfg.model.lnn, &mut rng)?)
    } else {
        Model::Lnn(LagrangianModel::new(&mut params, "lnn", n, &cfg.model.lnn, &mut rng)?)
    };
    Ok((model, params))
}

enum TrainSet {
    Samples(Samples),
    Windows(Windows),
}

impl TrainSet {
    fn len(&self) -> usize {
        match self {
            TrainSet::Samples(s) => s.len(),
            TrainSet::Windows(w) => w.len(),
        }
    }
}

fn train_set(cfg: &RunConfig, trajs: &[Trajectory]) -> Result<TrainSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    Ok(match cfg.train.objective {
        Objective::Acc => TrainSet::Samples(Samples::from_trajectories(trajs)?.subsample(cfg.data.samples, &mut rng)),
        Objective::Multistep => TrainSet::Windows(Windows::sample(trajs, cfg.train.h_train, cfg.data.samples, &mut rng)?),
    })
}

fn phase(cfg: &RunConfig, epoch: usize) -> (Active, LearningRates) {
    let lr = cfg.train.lr;
    match cfg.train.schedule {
        Schedule::Joint => (Active::All, lr),
        Schedule::Sequential if epoch < cfg.train.epochs => (Active::AeOnly, LearningRates { ae: lr.ae, lnn: 0.0 }),
        Schedule::Sequential => (Active::LnnOnly, LearningRates { ae: 0.0, lnn: lr.lnn }),
    }
}

pub fn total_epochs(cfg: &RunConfig) -> usize {
    match cfg.train.schedule {
        Schedule::Joint => cfg.train.epochs,
        Schedule::Sequential => 2 * cfg.train.epochs,
    }
}

fn batch_loss(model: &Model, params: &ProductPoint, cfg: &RunConfig, set: &TrainSet, rows: &[usize], active: Active) -> Result<(LossReport, crate::manifolds::ProductTangent)> {
    let tape = Tape::new();
    let b = Bound::new(&tape, params);
    let t = &cfg.train;
    let weights = RomLossWeights {
        gamma: t.gamma,
        biorth_penalty: t.biorth_penalty,
    };
    let out = match (model, set) {
        (Model::Lnn(m), TrainSet::Samples(s)) => lnn_acc_loss(&tape, &b, params, m, &s.select(rows), t.gamma)?,
        (Model::Lnn(m), TrainSet::Windows(w)) => lnn_multistep_loss(&tape, &b, params, m, &w.select(rows), t.substeps, t.gamma)?,
        (Model::Rolnn(m), TrainSet::Samples(s)) => rolnn_acc_loss(&tape, &b, params, m, &s.select(rows), weights, active)?,
        (Model::Rolnn(m), TrainSet::Windows(w)) => rolnn_ode_loss(&tape, &b, params, m, &w.select(rows), t.substeps, weights, active)?,
    };
    let g = gradient(&tape, &b, params, out.loss)?;
    Ok((out.report, g))
}

/// Projection residuals at the latent images of up to `count` states.
pub fn projection_check(model: &RolnnModel, params: &ProductPoint, q: &Array2<f64>, step: u64) -> ProjectionCheck {
    let (z, _) = model.encode_values(params, q, &Array2::zeros(q.raw_dim()));
    let d = model.latent_dim();
    let mut position = 0.0f64;
    let mut jacobian = 0.0f64;
    for r in 0..z.nrows() {
        let zr = z.row(r).to_owned().insert_axis(ndarray::Axis(0));
        let zs = zr.broadcast((d, d)).unwrap().to_owned();
        let (x, dx) = model.decode_values(params, &zs, &Array2::eye(d));
        let (z2, v2) = model.encode_values(params, &x, &dx);
        position = position.max((&z2.row(0) - &zr.row(0)).iter().fold(0.0, |m, e| m.max(e.abs())));
        jacobian = jacobian.max((&v2 - &Array2::<f64>::eye(d)).iter().fold(0.0, |m, e| m.max(e.abs())));
    }
    ProjectionCheck { step, position, jacobian }
}

/// Runs (or resumes) training. `on_epoch` sees every epoch log as it is produced.
pub fn train(cfg: &RunConfig, data: &RunData, resume: Option<Checkpoint>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.train.first().map(|t| t.dim()).ok_or_else(|| Error::Config("no training trajectories".into()))?;
    let mut ck = match resume {
        Some(ck) => ck,
        None => {
            let (model, params) = build_model(cfg, n)?;
            let optimizer = RiemannianAdam::new(&params, cfg.train.adam, cfg.train.lr);
            Checkpoint {
                config: cfg.clone(),
                model,
                params,
                optimizer,
                epoch: 0,
                steps: 0,
                status: Status::Running,
            }
        }
    };
    if ck.model.full_dim() != n {
        return Err(Error::Config(format!("model expects {} DoFs, data has {n}", ck.model.full_dim())));
    }
    let set = train_set(cfg, &data.train)?;
    let probe = {
        let k = data.train[0].len().min(8);
        data.train[0].q.slice(ndarray::s![..k, ..]).to_owned()
    };
    let mut projection = Vec::new();
    if let Model::Rolnn(m) = &ck.model {
        projection.push(projection_check(m, &ck.params, &probe, ck.steps));
    }
    let batch = cfg.train.batch_size.unwrap_or(set.len()).min(set.len());
    let mut log = Vec::new();
    let total = total_epochs(cfg);
    while ck.epoch < total {
        let epoch = ck.epoch;
        let (active, lr) = phase(cfg, epoch);
        ck.optimizer.lr = lr;
        let mut order: Vec<usize> = (0..set.len()).collect();
        if batch < set.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(2 + epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut sums: Option<(Vec<String>, Vec<f64>, f64)> = None;
        let mut diverged_rows = 0;
        let mut failure = None;
        for rows in order.chunks(batch) {
            let step = batch_loss(&ck.model, &ck.params, cfg, &set, rows, active).and_then(|(rep, g)| Ok((rep, ck.optimizer.step(&ck.params, &g)?)));
            match step {
                Ok((rep, next)) => {
                    ck.params = next;
                    ck.steps += 1;
                    diverged_rows += rep.diverged;
                    let w = rows.len() as f64 / set.len() as f64;
                    let s = sums.get_or_insert_with(|| (rep.names.iter().map(|s| s.to_string()).collect(), vec![0.0; rep.values.len()], 0.0));
                    for (a, v) in s.1.iter_mut().zip(&rep.values) {
                        *a += w * v;
                    }
                    s.2 += w * rep.total;
                    if let Model::Rolnn(m) = &ck.model {
                        if ck.steps % cfg.train.check_every as u64 == 0 {
                            projection.push(projection_check(m, &ck.params, &probe, ck.steps));
                        }
                    }
                }
                Err(e) if e.is_numerical() => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = failure {
            warn!("training stopped in epoch {epoch}: {e}");
            ck.status = Status::Diverged {
                epoch,
                message: e.to_string(),
            };
            return Ok(TrainOutcome { checkpoint: ck, log, projection });
        }
        let (names, values, total_loss) = sums.expect("at least one batch");
        let entry = EpochLog {
            epoch,
            names,
            values,
            total: total_loss,
            diverged_rows,
        };
        if epoch % cfg.train.log_every == 0 || epoch + 1 == total {
            info!("epoch {epoch}: loss {:e}", entry.total);
        }
        on_epoch(&entry);
        log.push(entry);
        ck.epoch += 1;
    }
    ck.status = Status::Completed;
    Ok(TrainOutcome { checkpoint: ck, log, projection })
}

