use super::*;
use crate::lagrangian::Scheme;
use crate::systems::{DatasetSpec, Mode};

fn small_lnn() -> RunConfig {
    let mut cfg = RunConfig::new(ExperimentKind::Lnn2Dof);
    let mut s = DatasetSpec::new(Mode::Unactuated, 4, 3);
    s.duration = Some(0.1);
    cfg.data.spec = Some(s);
    cfg.data.test_trajectories = 1;
    cfg.data.samples = 40;
    cfg.model.lnn.hidden = vec![8];
    cfg.train.epochs = 4;
    cfg.train.batch_size = Some(16);
    cfg.seed = 5;
    cfg
}

fn small_rolnn(objective: Objective) -> RunConfig {
    let mut cfg = RunConfig::new(ExperimentKind::RolnnCoupled16);
    let mut s = DatasetSpec::new(Mode::Coupled16, 3, 2);
    s.duration = Some(0.05);
    cfg.data.spec = Some(s);
    cfg.data.test_trajectories = 1;
    cfg.data.samples = 24;
    cfg.model.lnn.hidden = vec![8];
    cfg.model.ae_sizes = vec![4, 8, 16];
    cfg.train.objective = objective;
    cfg.train.h_train = 2;
    cfg.train.epochs = 3;
    cfg.train.batch_size = Some(8);
    cfg.train.check_every = 2;
    cfg
}

#[test]
fn config_defaults_round_trip_through_toml() {
    for kind in [ExperimentKind::Lnn2Dof, ExperimentKind::RolnnCoupled16] {
        let cfg = RunConfig::new(kind);
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
    let min = RunConfig::from_toml("kind = \"lnn-2dof\"\n[data.spec]\nmode = \"unactuated\"\ntrajectories = 3\n").unwrap();
    assert_eq!(min.train.epochs, 3000);
    assert_eq!(min.model.lnn.hidden, vec![64, 64]);
    assert_eq!(min.data.spec.unwrap().duration, None);
    let ingested = RunConfig::from_toml("kind = \"rolnn-ingested\"\n[data]\npath = \"x.txt\"\n").unwrap();
    assert_eq!(ingested.model.ae_sizes, vec![10, 32, 64, 192]);
    assert!(ingested.data.spec.is_none());
    let coupled = RunConfig::from_toml("kind = \"rolnn-coupled16\"\n[train]\nepochs = 7\n").unwrap();
    assert_eq!(coupled.data.samples, 24000);
    assert_eq!(coupled.train.lr.lnn, 1e-5);
    assert_eq!(coupled.train.epochs, 7);
}

#[test]
fn config_rejects_bad_knobs() {
    let bad = [
        "seed = 1\n",
        "kind = \"rolnn-ingested\"\n",
        "kind = \"lnn-2dof\"\n[data.spec]\nmode = \"coupled16\"\ntrajectories = 3\n",
        "kind = \"lnn-2dof\"\n[data.spec]\nmode = \"unactuated\"\ntrajectories = 3\n[train]\nepochs = 0\n",
        "kind = \"lnn-2dof\"\n[data.spec]\nmode = \"unactuated\"\ntrajectories = 3\n[train]\nschedule = \"sequential\"\n",
        "kind = \"rolnn-coupled16\"\n[data.spec]\nmode = \"coupled16\"\ntrajectories = 3\n[model]\nae_sizes = [8, 4, 16]\n",
        "kind = \"rolnn-coupled16\"\n[data.spec]\nmode = \"coupled16\"\ntrajectories = 3\n[model]\nalpha = 1.0\n",
        "kind = \"lnn-2dof\"\n[data.spec]\nmode = \"unactuated\"\ntrajectories = 3\n[eval]\nh_test = [0]\n",
        "kind = \"lnn-2dof\"\nunknown = 1\n",
    ];
    for text in bad {
        assert!(RunConfig::from_toml(text).is_err(), "accepted:\n{text}");
    }
}

#[test]
fn load_reports_missing_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "kind = \"rolnn-ingested\"\n[data]\npath = \"missing.txt\"\n").unwrap();
    let e = RunConfig::load(&p).unwrap_err();
    assert!(e.to_string().contains("missing.txt"), "{e}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = small_lnn();
    let data = load_data(&cfg).unwrap();
    let full = train(&cfg, &data, None, |_| {}).unwrap();
    let mut half = cfg.clone();
    half.train.epochs = 2;
    let first = train(&half, &data, None, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.json");
    first.checkpoint.save(&p).unwrap();
    let rest = train(&cfg, &data, Some(Checkpoint::load(&p).unwrap()), |_| {}).unwrap();
    assert_eq!(rest.checkpoint.epoch, 4);
    assert_eq!(rest.checkpoint.params, full.checkpoint.params);
    assert_eq!(rest.log, full.log[2..]);
}

#[test]
fn loss_log_lists_every_component() {
    let cases = [
        (small_lnn(), vec!["acc"]),
        (small_rolnn(Objective::Acc), vec!["ae_q", "ae_dq", "ae_ddq", "lnn_d", "lnn_n"]),
        (small_rolnn(Objective::Multistep), vec!["ae_q", "ae_dq", "lnn_d", "lnn_n"]),
    ];
    for (cfg, want) in cases {
        let data = load_data(&cfg).unwrap();
        let out = train(&cfg, &data, None, |_| {}).unwrap();
        assert_eq!(out.log.len(), cfg.train.epochs);
        let csv = loss_csv(&out.log);
        let header = csv.lines().next().unwrap();
        for name in want {
            assert!(header.split(',').any(|c| c == name), "{name} missing from {header}");
        }
        assert_eq!(csv.lines().count(), cfg.train.epochs + 1);
        assert!(out.log.iter().all(|e| e.values.len() == e.names.len()));
    }
}

#[test]
fn sequential_schedule_runs_both_phases() {
    let mut cfg = small_rolnn(Objective::Multistep);
    cfg.train.schedule = Schedule::Sequential;
    let data = load_data(&cfg).unwrap();
    let out = train(&cfg, &data, None, |_| {}).unwrap();
    assert_eq!(out.log.len(), 6);
    let val = |e: &EpochLog, n: &str| e.values[e.names.iter().position(|x| x == n).unwrap()];
    assert!(out.log[..3].iter().all(|e| val(e, "lnn_n") == 0.0 && val(e, "ae_q") > 0.0));
    assert!(out.log[3..].iter().all(|e| val(e, "ae_q") == 0.0 && val(e, "lnn_n") > 0.0));
}

#[test]
fn projection_holds_during_training() {
    let cfg = small_rolnn(Objective::Acc);
    let data = load_data(&cfg).unwrap();
    let out = train(&cfg, &data, None, |_| {}).unwrap();
    assert_eq!(out.projection[0].step, 0);
    assert!(out.projection.len() >= 2);
    for p in &out.projection {
        assert!(p.position < 1e-8 && p.jacobian < 1e-8, "{p:?}");
    }
}

#[test]
fn metrics_are_reproducible() {
    let cfg = small_lnn();
    let csv = || {
        let data = load_data(&cfg).unwrap();
        let out = train(&cfg, &data, None, |_| {}).unwrap();
        let m = evaluate(&out.checkpoint, &data.test, &[1, 4], Scheme::Rk4, 1).unwrap();
        (metrics_csv(&m), summary_csv(&m), energy_csv(&m))
    };
    assert_eq!(csv(), csv());
}

#[test]
fn run_outputs_are_written() {
    let mut cfg = small_rolnn(Objective::Multistep);
    cfg.eval.h_test = vec![1, 2];
    let data = load_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(&cfg, &data, dir.path(), None).unwrap();
    let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck.params, out.checkpoint.params);
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&resolved).unwrap().train, cfg.train);
    let m = run_eval(&ck, &data.test, &[1, 2], Scheme::Euler, dir.path(), true).unwrap();
    assert_eq!(m.windows.len(), 2);
    for f in ["loss.csv", "projection.csv", "loss.svg", "metrics.csv", "summary.csv", "acc.csv", "energy.csv", "errors.svg", "energy.svg"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let report = inspect(&ck, 0, 2).unwrap();
    assert!(!report.is_empty());
}

#[test]
#[ignore]
fn bench_epochs() {
    for (kind, obj, mode) in [
        (ExperimentKind::Lnn2Dof, Objective::Acc, Mode::Unactuated),
        (ExperimentKind::Lnn2Dof, Objective::Multistep, Mode::Unactuated),
        (ExperimentKind::RolnnCoupled16, Objective::Acc, Mode::Coupled16),
        (ExperimentKind::RolnnCoupled16, Objective::Multistep, Mode::Coupled16),
    ] {
        let mut cfg = RunConfig::new(kind);
        let mut s = DatasetSpec::new(mode, 12, 0);
        s.duration = Some(2.0);
        cfg.data.spec = Some(s);
        cfg.data.test_trajectories = 2;
        cfg.train.objective = obj;
        cfg.train.epochs = 10;
        cfg.data.samples = 1000;
        let data = load_data(&cfg).unwrap();
        let t = std::time::Instant::now();
        let out = train(&cfg, &data, None, |_| {}).unwrap();
        println!("{kind:?} {obj:?}: {:.3} s/epoch, loss {:e}", t.elapsed().as_secs_f64() / 10.0, out.log.last().unwrap().total);
    }
}
