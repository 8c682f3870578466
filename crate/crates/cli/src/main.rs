//! `rolnn` command-line runner.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and I/O errors,
//! 2 for numerical failures such as diverged training.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use rolnn::experiment::{inspect, load_data, run_eval, run_train, Checkpoint, RunConfig, Status};
use rolnn::lagrangian::Scheme;
use rolnn::systems::{generate_dataset, ingest_trajectories, save, DatasetSpec, Schema};
use rolnn::Error;

#[derive(Parser)]
#[command(name = "rolnn", version, about = "Lagrangian and reduced-order Lagrangian network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk4,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Rk4 => Scheme::Rk4,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a dataset spec (or a run config's data.spec).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Train a model; writes the checkpoint and the loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Windowed rollout errors, acceleration errors and energy traces.
    Eval {
        checkpoint: PathBuf,
        /// Evaluate on this dataset file instead of the configured split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, value_delimiter = ',')]
        h_test: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Print mass spectra, potential slices and autoencoder residuals.
    Inspect {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a DatasetSpec,
    file: String,
    n: usize,
    dt: f64,
    trajectories: usize,
    rows: Vec<usize>,
}

fn read_spec(path: &Path) -> Result<DatasetSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Ok(spec) = toml::from_str::<DatasetSpec>(&text) {
        return Ok(spec);
    }
    match RunConfig::from_toml(&text) {
        Ok(RunConfig { data, .. }) => data.spec.ok_or_else(|| usage("run config has no data.spec")),
        Err(_) => toml::from_str::<DatasetSpec>(&text).map_err(|e| usage(format!("{}: {e}", path.display()))),
    }
}

fn gen_data(config: &Path, seed: Option<u64>, out: &Path, format: FormatArg) -> Result<(), Failure> {
    let mut spec = read_spec(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate_dataset(&spec)?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let name = match format {
        FormatArg::Text => "dataset.txt",
        FormatArg::Bin => "dataset.bin",
    };
    save(&ds, &out.join(name))?;
    let manifest = Manifest {
        spec: &spec,
        file: name.into(),
        n: ds.header.n,
        dt: ds.header.dt,
        trajectories: ds.trajectories.len(),
        rows: ds.trajectories.iter().map(|t| t.len()).collect(),
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(Error::from)?).map_err(Error::from)?;
    println!("wrote {} trajectories of {} DoFs to {}", ds.trajectories.len(), ds.header.n, out.join(name).display());
    Ok(())
}

fn cmd_train(config: &Path, seed: Option<u64>, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(format!("runs/seed{}", cfg.seed)));
    cfg.out = Some(out.clone());
    let resume = resume.map(|p| Checkpoint::load(&p)).transpose()?;
    let data = load_data(&cfg)?;
    info!("{} training and {} test trajectories", data.train.len(), data.test.len());
    let outcome = run_train(&cfg, &data, &out, resume)?;
    let last = outcome.log.last().map(|e| e.total).unwrap_or(f64::NAN);
    println!("trained {} epochs, final loss {last:e}, outputs in {}", outcome.checkpoint.epoch, out.display());
    if let Status::Diverged { epoch, message } = &outcome.checkpoint.status {
        return Err(Failure {
            code: 2,
            msg: format!("training diverged in epoch {epoch}: {message}"),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    data: Option<PathBuf>,
    split: Split,
    h_test: Option<Vec<usize>>,
    scheme: Option<SchemeArg>,
    out: Option<PathBuf>,
    no_plots: bool,
) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let trajs = match data {
        Some(p) => ingest_trajectories(&p, Schema { n: Some(ck.model.full_dim()), dt: None })?.trajectories,
        None => {
            let d = load_data(&ck.config)?;
            match split {
                Split::Train => d.train,
                Split::Test => d.test,
            }
        }
    };
    let h = h_test.unwrap_or_else(|| ck.config.eval.h_test.clone());
    if h.is_empty() || h.contains(&0) {
        return Err(usage("--h-test needs positive horizons"));
    }
    let scheme = scheme.map(Scheme::from).unwrap_or(ck.config.eval.scheme);
    let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let m = run_eval(&ck, &trajs, &h, scheme, &out, ck.config.eval.plots && !no_plots)?;
    println!("median acceleration error {:e}", m.median_acc());
    for w in &m.windows {
        let s = |v: &[f64]| rolnn::rom::summarize(v).median;
        println!("h = {:>3}: median position error {:e}, velocity error {:e}", w.h, s(&w.pos), s(&w.vel));
    }
    println!("metrics written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, seed, out, format } => gen_data(&config, seed, &out, format),
        Command::Train { config, seed, out, resume } => cmd_train(&config, seed, out, resume),
        Command::Eval {
            checkpoint,
            data,
            split,
            h_test,
            scheme,
            out,
            no_plots,
        } => cmd_eval(&checkpoint, data, split, h_test, scheme, out, no_plots),
        Command::Inspect { checkpoint, seed, points } => {
            let ck = Checkpoint::load(&checkpoint)?;
            print!("{}", inspect(&ck, seed, points.max(1))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
