use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use offce::config::{EnvSpec, ExperimentConfig, PerformanceSpec};
use offce::output::{aggregate, emit_outputs, load_run, read_rows, AggregateRow, RunSummary};
use offce::run::{predict_at, run_experiment, run_experiment_with_workers, RunRecord, TrialStatus};
use offpolicy_ce::ce::{AveragingSchedule, MixingSchedule};
use offpolicy_ce::schedule::Schedule;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn small_chain(trials: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
        "environment": {{"kind": "chain_walk", "num_states": 20, "rbf_count": 5}},
        "behaviour": [0,0,0,0,0,0,0,0,0,0],
        "initial_model": {{"variance": 1.0}},
        "performance": {{"kind": "square", "scale": 1.0}},
        "predict": {{"lambda": 0.5, "ridge": 1.0}},
        "ce": {{
            "rho": 0.2, "epsilon": 0.9,
            "beta": {{"kind": "power", "scale": 1.0, "exponent": 0.3}},
            "beta_bar": {{"kind": "inverse_update_index"}},
            "zeta": {{"kind": "inverse_update_index"}},
            "c": {{"kind": "constant", "value": 0.3}},
            "r": 0.01,
            "length": {{"kind": "constant", "n": 400}},
            "max_iterations": 60
        }},
        "trials": {trials},
        "seeds": {:?},
        "eval_every": 20
    }}"#,
        (0..trials as u64).map(|s| s + 7).collect::<Vec<_>>()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

/// Records with the wall-clock fields cleared.
fn timeless(mut rs: Vec<RunRecord>) -> Vec<RunRecord> {
    for r in &mut rs {
        r.elapsed.clear();
        r.wall_seconds = 0.0;
    }
    rs
}

fn offce(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_offce")).args(args).output().unwrap()
}

fn files_except_timing(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.csv" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_config_same_records() {
    let cfg = small_chain(1);
    let a = timeless(run_experiment(&cfg).unwrap());
    let b = timeless(run_experiment(&cfg).unwrap());
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].status, TrialStatus::Ok, "{:?}", a[0].error);
    assert_eq!(a, b);
    assert!(a[0].rows.windows(2).all(|w| w[0].j < w[1].j));
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = small_chain(3);
    let one = timeless(run_experiment_with_workers(&cfg, 1).unwrap());
    let three = timeless(run_experiment_with_workers(&cfg, 3).unwrap());
    assert_eq!(one, three);
    assert_eq!(one.iter().map(|r| r.trial).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn binary_output_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&small_chain(2)).unwrap()).unwrap();
    let dirs = [tmp.path().join("a/out"), tmp.path().join("b/out")];
    for d in &dirs {
        let o = Command::new(env!("CARGO_BIN_EXE_offce"))
            .args(["optimize", "-c", cfg_path.to_str().unwrap(), "-o", "out"])
            .current_dir(fs::create_dir_all(d.parent().unwrap()).map(|_| d.parent().unwrap()).unwrap())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(d.join("timing.csv").exists());
    }
    let (a, b) = (files_except_timing(&dirs[0]), files_except_timing(&dirs[1]));
    assert!(a.len() >= 6);
    assert_eq!(a, b);
}

#[test]
fn echoed_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_chain(2);
    let records = run_experiment(&cfg).unwrap();
    emit_outputs(tmp.path(), &cfg, &records, None).unwrap();
    let echoed = ExperimentConfig::load(&tmp.path().join("resolved_config.json")).unwrap();
    assert_eq!(echoed, cfg.resolved());
    assert!(echoed.initial_model.mean.is_some() && echoed.trajectory.length.is_some());
    assert_eq!(timeless(run_experiment(&echoed).unwrap()), timeless(records));
}

#[test]
fn csv_reparse_matches_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_chain(2);
    let records = run_experiment(&cfg).unwrap();
    emit_outputs(tmp.path(), &cfg, &records, Some("sample")).unwrap();
    let (runs, audits) = load_run(tmp.path()).unwrap();
    assert_eq!(runs, records.iter().map(RunSummary::of).collect::<Vec<_>>());
    for (r, a) in records.iter().zip(&audits) {
        assert_eq!(&r.rows, a);
    }
    let agg: Vec<AggregateRow> = read_rows(&tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg, aggregate(&records));
    assert!(fs::read_to_string(tmp.path().join("plot.svg")).unwrap().contains("<svg"));
}

#[test]
fn aggregate_has_mean_and_std_per_iteration() {
    let cfg = small_chain(3);
    let records = run_experiment(&cfg).unwrap();
    let agg = aggregate(&records);
    let sample: Vec<_> = agg.iter().filter(|r| r.series == "sample").collect();
    assert_eq!(sample.len(), 60);
    for row in &sample {
        let ys: Vec<f64> = records.iter().map(|r| r.rows[row.j].objective).collect();
        let m = ys.iter().sum::<f64>() / 3.0;
        let s = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert_eq!(row.count, 3);
        assert!((row.mean - m).abs() <= 1e-12 * (1.0 + m.abs()));
        assert!((row.std - s).abs() <= 1e-12 * (1.0 + s));
    }
    assert_eq!(agg.iter().filter(|r| r.series == "reported").count(), 3);
}

#[test]
fn empty_run_writes_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_chain(0);
    cfg.seeds.clear();
    let records = run_experiment(&cfg).unwrap();
    assert!(records.is_empty());
    emit_outputs(tmp.path(), &cfg, &records, None).unwrap();
    for f in ["runs.csv", "aggregate.csv", "evaluations.csv", "timing.csv"] {
        let text = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}: {text}");
    }
}

#[test]
fn failing_trial_is_recorded_and_others_proceed() {
    let mut cfg = small_chain(2);
    cfg.normalize_performance = true;
    // Trial 0 starts at state 0 on a 5-step path and never reaches a reward,
    // so J_hat(w_b) = 0 cannot normalize; the shared start applies to both.
    cfg.trajectory.length = Some(5);
    cfg.ce.length = offpolicy_ce::ce::LengthRule::Constant { n: 5 };
    if let EnvSpec::ChainWalk { start, .. } = &mut cfg.environment {
        *start = Some(0);
    }
    let recs = run_experiment(&cfg).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.status == TrialStatus::NumericalError));
    assert!(recs[0].error.as_deref().unwrap().contains("normalize"));
}

#[test]
fn seed_list_must_match_trials() {
    let mut cfg = small_chain(2);
    cfg.seeds.pop();
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn stored_path_gives_same_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_chain(1);
    let path = tmp.path().join("traj.txt");
    offce::run::generate_path(&cfg, 7, &path).unwrap();
    let w: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
    let fresh = predict_at(&cfg, 7, &w).unwrap();
    cfg.trajectory.path = Some(path);
    let stored = predict_at(&cfg, 7, &w).unwrap();
    assert_eq!(fresh, stored);
    assert!(fresh.objective.is_finite());
}

#[test]
fn chain_walk_config_carries_table_constants() {
    let cfg = ExperimentConfig::load(&configs_dir().join("chain_walk.json")).unwrap();
    cfg.validate().unwrap();
    let EnvSpec::ChainWalk {
        num_states,
        discount,
        rbf_count,
        temperature,
        ..
    } = cfg.environment
    else {
        panic!("not a chain walk")
    };
    assert_eq!((num_states, discount, rbf_count, temperature), (450, 0.99, 5, 1.0));
    assert_eq!(cfg.behaviour.len(), 10);
    assert_eq!((cfg.ce.rho, cfg.ce.epsilon, cfg.ce.r), (0.05, 0.9, 0.01));
    assert_eq!(cfg.ce.beta, Schedule::constant(0.2));
    assert_eq!(cfg.ce.c, Schedule::constant(0.08));
    assert_eq!(cfg.ce.beta_bar, AveragingSchedule::Off);
    assert_eq!(cfg.ce.zeta, MixingSchedule::Constant { value: 0.0 });
}

#[test]
fn cartpole_config_carries_behaviour_policy() {
    let cfg = ExperimentConfig::load(&configs_dir().join("cartpole.json")).unwrap();
    cfg.validate().unwrap();
    // (psi, psi_dot, x, x_dot) gains, then sigma.
    assert_eq!(cfg.behaviour, vec![4.252, 3.401, 3.684, 3.193, 5.01]);
    let PerformanceSpec::AnchorState { scale, state } = &cfg.performance else {
        panic!("anchor performance expected")
    };
    assert_eq!(*scale, 0.1);
    assert_eq!(state, &vec![2.276, 1.069, 0.235, 3.581]);
}

#[test]
fn every_shipped_config_runs_briefly() {
    for name in ["chain_walk", "random_mdp", "self_drive", "cartpole", "pendulum"] {
        let mut cfg = ExperimentConfig::load(&configs_dir().join(format!("{name}.json"))).unwrap();
        cfg.validate().unwrap();
        cfg.trials = 1;
        cfg.seeds = vec![1];
        cfg.ce.max_iterations = 3;
        cfg.eval_every = 0;
        // Shipped path lengths: the chain walk needs its full N to reach a reward.
        cfg.trajectory.length = Some(cfg.ce.length.max_over(3));
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs[0].status, TrialStatus::Ok, "{name}: {:?}", recs[0].error);
        assert_eq!(recs[0].rows.len(), 3, "{name}");
        assert!(recs[0].objective_final.unwrap().is_finite(), "{name}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();

    let o = offce(&["optimize", "-o", out]);
    assert_eq!(o.status.code(), Some(1), "missing config");

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"environment\": 3}").unwrap();
    let o = offce(&["optimize", "-c", bad.to_str().unwrap(), "-o", out]);
    assert_eq!(o.status.code(), Some(1), "malformed config");

    let o = offce(&["sweep-bounds", "--instances", "3", "--pairs", "5", "-o", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("sweep.csv").exists());

    let chain = tmp.path().join("chain.json");
    fs::write(&chain, serde_json::to_string(&small_chain(1)).unwrap()).unwrap();
    let o = offce(&["verify-bounds", "-c", chain.to_str().unwrap(), "-o", out, "--weights", "0.5,-0.5,0,0,0,0,0,0,0,0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("bounds.csv").exists());

    let cart = configs_dir().join("cartpole.json");
    let o = offce(&["verify-bounds", "-c", cart.to_str().unwrap(), "-o", out]);
    assert_eq!(o.status.code(), Some(1), "bounds need a tabular MDP");

    let mut failing = small_chain(1);
    failing.normalize_performance = true;
    failing.trajectory.length = Some(5);
    failing.ce.length = offpolicy_ce::ce::LengthRule::Constant { n: 5 };
    if let EnvSpec::ChainWalk { start, .. } = &mut failing.environment {
        *start = Some(0);
    }
    let f = tmp.path().join("failing.json");
    fs::write(&f, serde_json::to_string(&failing).unwrap()).unwrap();
    let o = offce(&["optimize", "-c", f.to_str().unwrap(), "-o", out]);
    assert_eq!(o.status.code(), Some(2), "numerical failure");
    assert!(fs::read_to_string(tmp.path().join("runs.csv")).unwrap().contains("numerical_error"));

    let o = offce(&["report", "-o", out]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn gen_traj_and_predict_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let chain = tmp.path().join("chain.json");
    fs::write(&chain, serde_json::to_string(&small_chain(1)).unwrap()).unwrap();
    let c = chain.to_str().unwrap();
    let o = offce(&["gen-traj", "-c", c, "-o", out, "--seed", "11", "--length", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stored = offpolicy_ce::trajectory::TrajectoryStore::<usize, usize>::load(tmp.path().join("trajectory-11.txt")).unwrap();
    assert_eq!(stored.len(), 300);
    let o = offce(&["predict", "-c", c, "-o", out, "--weights", "1,0,0,0,0,0,0,0,0,-1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("predict.json")).unwrap()).unwrap();
    assert!(v["objective"].as_f64().unwrap().is_finite());
}
