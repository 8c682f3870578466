//! Runs that write their results into an output directory.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::evaluate::{acc_csv, energy_csv, evaluate, metrics_csv, summary_csv, Metrics};
use super::plot::{line_chart, Series};
use super::train::{projection_check, train, Checkpoint, EpochLog, Model, RunData, TrainOutcome};
use crate::error::Result;
use crate::lagrangian::{LagrangianModel, Scheme, Trajectory};
use crate::manifolds::ProductPoint;
use crate::numerics::sym_eig;
use crate::rom::summarize;

fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

/// `epoch,total,<components>,diverged_rows`, one line per epoch.
pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut s = String::new();
    if let Some(first) = log.first() {
        let _ = writeln!(s, "epoch,total,{},diverged_rows", first.names.join(","));
    }
    for e in log {
        let vals: Vec<String> = e.values.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{},{:?},{},{}", e.epoch, e.total, vals.join(","), e.diverged_rows);
    }
    s
}

/// Trains on the configured data and writes the resolved configuration, the
/// loss log, projection checks, the checkpoint and a loss plot into `out`.
pub fn run_train(cfg: &RunConfig, data: &RunData, out: &Path, resume: Option<Checkpoint>) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    write(out, "config.resolved.toml", &cfg.to_toml())?;
    let outcome = train(cfg, data, resume, |_| {})?;
    write(out, "loss.csv", &loss_csv(&outcome.log))?;
    if !outcome.projection.is_empty() {
        let mut s = String::from("step,position,jacobian\n");
        for p in &outcome.projection {
            let _ = writeln!(s, "{},{:?},{:?}", p.step, p.position, p.jacobian);
        }
        write(out, "projection.csv", &s)?;
    }
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    if cfg.eval.plots {
        let series = vec![Series {
            name: "total".into(),
            points: outcome.log.iter().map(|e| (e.epoch as f64, e.total)).collect(),
        }];
        write(out, "loss.svg", &line_chart("Training loss", "epoch", "loss", "loss.csv", &series, true))?;
    }
    Ok(outcome)
}

/// Evaluates and writes metrics, summaries, acceleration errors, energy
/// traces and plots into `out`.
pub fn run_eval(ck: &Checkpoint, test: &[Trajectory], h_test: &[usize], scheme: Scheme, out: &Path, plots: bool) -> Result<Metrics> {
    let m = evaluate(ck, test, h_test, scheme, 3)?;
    write_eval_outputs(&m, out, plots)?;
    Ok(m)
}

pub fn write_eval_outputs(m: &Metrics, out: &Path, plots: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write(out, "metrics.csv", &metrics_csv(m))?;
    write(out, "summary.csv", &summary_csv(m))?;
    write(out, "acc.csv", &acc_csv(m))?;
    write(out, "energy.csv", &energy_csv(m))?;
    if plots {
        let by_h = |f: fn(&crate::rom::WindowErrors) -> &Vec<f64>| m.windows.iter().map(|w| (w.h as f64, summarize(f(w)).median)).collect();
        let series = vec![
            Series { name: "position".into(), points: by_h(|w| &w.pos) },
            Series { name: "velocity".into(), points: by_h(|w| &w.vel) },
        ];
        write(out, "errors.svg", &line_chart("Median prediction error", "horizon (steps)", "squared error", "metrics.csv", &series, true))?;
        let series: Vec<Series> = m
            .energy
            .iter()
            .map(|e| Series {
                name: format!("trajectory {}", e.trajectory),
                points: e.energy.iter().enumerate().map(|(k, v)| (k as f64 * e.dt, *v)).collect(),
            })
            .collect();
        write(out, "energy.svg", &line_chart("Learned energy along rollouts", "time (s)", "energy", "energy.csv", &series, false))?;
    }
    Ok(())
}

fn lagrangian_report(s: &mut String, m: &LagrangianModel, params: &ProductPoint, points: &Array2<f64>, label: &str) -> Result<()> {
    let n = m.n;
    let mass = m.mass_values(params, points)?;
    let _ = writeln!(s, "{label} mass matrix eigenvalues:");
    for r in 0..points.nrows() {
        let mr = Array2::from_shape_vec((n, n), mass.row(r).to_vec()).expect("n x n mass rows");
        let e = sym_eig(&mr)?;
        let cond = e.values[n - 1] / e.values[0];
        let _ = writeln!(s, "  at {:.3}: {:.6e} (condition {cond:.3e})", points.row(r), e.values);
    }
    let _ = writeln!(s, "{label} potential slices (other coordinates zero):");
    let grid: Vec<f64> = (0..=10).map(|i| -1.0 + 0.2 * i as f64).collect();
    for k in 0..n {
        let mut q = Array2::zeros((grid.len(), n));
        for (i, &x) in grid.iter().enumerate() {
            q[[i, k]] = x;
        }
        let (_, v) = m.energies(params, &q, &Array2::zeros((grid.len(), n)))?;
        let vals: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
        let _ = writeln!(s, "  axis {k}: {}", vals.join(" "));
    }
    Ok(())
}

/// Human-readable summary of a checkpoint: mass spectra at random
/// configurations in `[-1, 1]^n`, potential slices along the coordinate axes
/// and, for reduced models, the autoencoder constraint residuals.
pub fn inspect(ck: &Checkpoint, seed: u64, points: usize) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {:?}", ck.config.kind);
    let _ = writeln!(s, "epochs trained: {}, optimizer steps: {}, status: {:?}", ck.epoch, ck.steps, ck.status);
    let _ = writeln!(s, "parameters: {} tensors, {} scalars", ck.params.len(), ck.params.num_scalars());
    match &ck.model {
        Model::Lnn(m) => {
            let q = Array2::from_shape_fn((points, m.n), |_| rng.random_range(-1.0..1.0));
            lagrangian_report(&mut s, m, &ck.params, &q, "")?;
        }
        Model::Rolnn(m) => {
            let d = m.latent_dim();
            let z = Array2::from_shape_fn((points, d), |_| rng.random_range(-1.0..1.0));
            lagrangian_report(&mut s, &m.latent, &ck.params, &z, "latent")?;
            let _ = writeln!(s, "autoencoder {:?}, {}", m.ae.sizes, if m.ae.is_overparam() { "overparametrized" } else { "biorthogonal" });
            let _ = writeln!(s, "max |ΨᵀΦ − I| over layers: {:.3e}", m.ae.biorth_residual(&ck.params));
            let (x, _) = m.decode_values(&ck.params, &z, &Array2::zeros((points, d)));
            let p = projection_check(m, &ck.params, &x, ck.steps);
            let _ = writeln!(s, "max |ρ(φ(z)) − z|: {:.3e}", p.position);
            let _ = writeln!(s, "max |dρ dφ − I|: {:.3e}", p.jacobian);
            let scale: Array1<f64> = x.map_axis(ndarray::Axis(0), |c| c.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let _ = writeln!(s, "decoded magnitude per DoF: {scale:.3e}");
        }
    }
    Ok(s)
}

