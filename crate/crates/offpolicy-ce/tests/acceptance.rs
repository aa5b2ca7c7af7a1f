//! One PASS/FAIL line per acceptance criterion. Exits non-zero when any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant, SystemTime};

use nalgebra::DVector;
use offpolicy_ce::analysis::*;
use offpolicy_ce::ce::*;
use offpolicy_ce::env::*;
use offpolicy_ce::features::*;
use offpolicy_ce::lstd::*;
use offpolicy_ce::mdp::*;
use offpolicy_ce::policy::*;
use offpolicy_ce::schedule::Schedule;
use offpolicy_ce::trajectory::generate_trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(" "))
}

const SEEDS: u64 = 5;

// ---------------------------------------------------------------- 1–3

struct ChainPrediction {
    x_ok: Vec<(String, usize, Vec<f64>)>,
    ell_ok: Vec<(String, usize, Vec<f64>)>,
    onpolicy: Vec<f64>,
    elapsed: Duration,
}

fn chain_prediction() -> ChainPrediction {
    let start = Instant::now();
    let n = 20;
    let len = 200_000;
    let mdp = build_chain_walk(n).unwrap();
    let rbf = RbfSpec::uniform(n, 5);
    let phi = feature_matrix(&rbf, n);
    let psi = ActionBlocks { base: rbf.clone(), num_actions: 2 };
    let fam = SoftmaxFamily { features: psi, temperature: 1.0 };
    let b = fam.policy(&[0.0; 10]).unwrap();
    let tb = b.table(n);
    let a = 0.05;
    let targets = [
        vec![a, a, a, a, a, -a, -a, -a, -a, -a],
        vec![-a, -a, -a, -a, -a, a, a, a, a, a],
        vec![a, -a, a, -a, a, -a, a, -a, a, -a],
    ];
    let perf = Performance::Square { scale: 1.0 };
    let env = TabularEnv::new(mdp.clone());
    let stores: Vec<_> = (0..SEEDS)
        .map(|s| generate_trajectory(&env, &b, len, s).unwrap())
        .collect();
    let paths: Vec<_> = stores
        .iter()
        .map(|s| PreparedPath::new(s.records(), &rbf, &b))
        .collect();
    let mut x_ok = Vec::new();
    let mut ell_ok = Vec::new();
    for lambda in [0.0, 0.5, 1.0] {
        let mut cfg = PredictConfig::new(lambda, mdp.discount());
        cfg.ridge = 1.0;
        for (ti, w) in targets.iter().enumerate() {
            let target = fam.policy(w).unwrap();
            let tw = target.table(n);
            let x_star = closed_form_limit(&mdp, &tw, &tb, lambda, &phi).unwrap();
            let j_star = exact_objective_behaviour(&mdp, &tw, &tb, lambda, &perf, &phi).unwrap();
            let mut xe = Vec::new();
            let mut le = Vec::new();
            for p in &paths {
                let out = p.predict(&target, len, &cfg, &perf).unwrap();
                xe.push(sup_norm(&(&out.solution - &x_star)) / sup_norm(&x_star));
                le.push((out.objective - j_star).abs() / j_star.abs());
            }
            let label = format!("lambda={lambda} target={ti}");
            x_ok.push((label.clone(), xe.iter().filter(|e| **e < 0.05).count(), xe));
            ell_ok.push((label, le.iter().filter(|e| **e < 0.05).count(), le));
        }
    }
    let v = exact_value(&mdp, &tb).unwrap();
    let nu = stationary_distribution(&induced_chain(&mdp, &tb).unwrap()).unwrap();
    let pv = projection(&phi, &nu, &v).unwrap();
    let mut cfg = PredictConfig::new(1.0, mdp.discount());
    cfg.ridge = 1.0;
    let onpolicy = paths
        .iter()
        .map(|p| {
            let out = p.predict(&b, len, &cfg, &perf).unwrap();
            weighted_norm(&(&phi * out.solution - &pv), &nu) / weighted_norm(&pv, &nu)
        })
        .collect();
    ChainPrediction {
        x_ok,
        ell_ok,
        onpolicy,
        elapsed: start.elapsed(),
    }
}

fn settings_verdict(rows: &[(String, usize, Vec<f64>)], elapsed: Duration) -> Verdict {
    let worst = rows.iter().min_by_key(|r| r.1).unwrap();
    let pass = rows.iter().all(|r| r.1 >= 4) && elapsed < Duration::from_secs(30);
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| r.1 < 4)
        .map(|r| format!("{} {}/5 {}", r.0, r.1, fmt(&r.2)))
        .collect();
    let mut detail = format!(
        "settings passing 4/5 seeds: {}/{}; worst {} at {}/5; shared runtime {}",
        rows.iter().filter(|r| r.1 >= 4).count(),
        rows.len(),
        worst.0,
        worst.1,
        secs(elapsed)
    );
    if !failing.is_empty() {
        detail.push_str(&format!("; failing: {}", failing.join("; ")));
    }
    verdict(pass, detail)
}

// ---------------------------------------------------------------- 4

fn criterion4() -> Verdict {
    let start = Instant::now();
    let reports = sweep_bounds(100, 0, &SWEEP_COMBOS, 100).unwrap();
    let elapsed = start.elapsed();
    let asserted: Vec<_> = reports.iter().filter(|r| r.asserted).collect();
    let violations = asserted.iter().filter(|r| r.violated()).count();
    let min_slack = asserted
        .iter()
        .filter(|r| r.hypothesis_met)
        .map(|r| r.slack)
        .fold(f64::INFINITY, f64::min);
    verdict(
        violations == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{} asserted checks, {violations} violations, min slack {min_slack:.3e}, runtime {}",
            asserted.len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion5() -> Verdict {
    let start = Instant::now();
    let rho = 0.1;
    let beta = Schedule::power(1.0, 0.6);
    let mut finals = Vec::new();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gamma = 0.0;
        for j in 1..=100_000 {
            let y = rng.random_range(0..10) as f64;
            gamma = update_quantile(gamma, y, beta.at(j), rho);
        }
        finals.push(gamma);
    }
    let ok = finals.iter().filter(|g| (*g - 9.0).abs() <= 0.5).count();
    let elapsed = start.elapsed();
    verdict(
        ok == 5 && elapsed < Duration::from_secs(5),
        format!("gamma after 1e5 updates {} ({ok}/5 within 0.5 of 9), runtime {}", fmt(&finals), secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 6

fn criterion6() -> Verdict {
    let k = 2;
    let candidates: Vec<DVector<f64>> = (0..10)
        .map(|i| DVector::from_vec(vec![(i as f64 * 0.7).sin() * 2.0, (i as f64 * 1.3).cos() - 0.5]))
        .collect();
    let values: Vec<f64> = (0..10).map(|i| (i * 7 % 10) as f64 / 9.0).collect();
    let rho = 0.3;
    let r = 0.5;
    // Exhaustive oracle: uniform law over the candidates, elite = top ⌈ρ·10⌉.
    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap());
    let elite = &order[..3];
    let z: f64 = elite.iter().map(|&i| shape(values[i], r)).sum();
    let xi0_star = elite
        .iter()
        .fold(DVector::zeros(k), |acc, &i| acc + &candidates[i] * shape(values[i], r))
        / z;
    let xi1_star = elite.iter().fold(nalgebra::DMatrix::zeros(k, k), |acc, &i| {
        let d = &candidates[i] - &xi0_star;
        acc + &d * d.transpose() * shape(values[i], r)
    }) / z;

    // 2/(j+3): gain times elite mass above 1/2, so the error shrinks like j^-1/2.
    let beta = Schedule::Power {
        scale: 2.0,
        exponent: 1.0,
        offset: 3.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut gamma = 0.0;
    let mut xi0 = DVector::zeros(k);
    let mut xi1 = nalgebra::DMatrix::zeros(k, k);
    for j in 1..=100_000 {
        let i = rng.random_range(0..10);
        let b = beta.at(j);
        update_xi(&mut xi0, &mut xi1, &candidates[i], values[i], gamma, b, r);
        gamma = update_quantile(gamma, values[i], b, rho);
    }
    let scale0 = xi0_star.amax();
    let scale1 = xi1_star.amax();
    let e0 = (&xi0 - &xi0_star).amax() / scale0;
    let e1 = (&xi1 - &xi1_star).amax() / scale1;
    verdict(
        e0 < 0.02 && e1 < 0.02,
        format!(
            "xi0 {} vs oracle {} (rel {e0:.4}); xi1 rel error {e1:.4}; gamma {gamma:.3}",
            fmt(xi0.as_slice()),
            fmt(xi0_star.as_slice())
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion7() -> Verdict {
    let c: f64 = 0.1;
    let j_star = ((1e3f64).ln() / -(1.0 - c).ln()).ceil() as usize;
    let mut t = 0.0;
    let mut inside = true;
    for j in 1..=j_star {
        t = update_threshold(t, 1.0 + j as f64, 0.0, c);
        inside &= t > -1.0 && t < 1.0;
        let closed = 1.0 - (1.0 - c).powi(j as i32);
        inside &= (t - closed).abs() < 1e-12;
    }
    let mut down = 0.0;
    for _ in 0..10_000 {
        down = update_threshold(down, 0.0, 1.0, c);
        inside &= down > -1.0 && down < 1.0;
    }
    verdict(
        inside && 1.0 - t < 1e-3,
        format!("T at j={j_star}: 1 - {:.3e}; closed form matched and T stayed in (-1,1) over 1e4 forced-down steps", 1.0 - t),
    )
}

// ---------------------------------------------------------------- 8

fn desk_config() -> CeConfig {
    CeConfig {
        rho: 0.3,
        beta: Schedule::power(1.0, 0.3),
        beta_bar: AveragingSchedule::PerUpdate {
            schedule: Schedule::power(1.0, 0.6),
        },
        c: Schedule::constant(0.3),
        tracked_previous_threshold: true,
        max_iterations: 50_000,
        stop_window: 2000,
        ..CeConfig::table_defaults(1)
    }
}

fn criterion8a() -> Verdict {
    let start = Instant::now();
    let cfg = desk_config();
    let mut parts = Vec::new();
    let mut pass = true;
    for k in [1usize, 3] {
        let wstar: Vec<f64> = [0.7, -0.4, 1.1][..k].to_vec();
        let mut errs = Vec::new();
        for seed in 0..SEEDS {
            let ws = wstar.clone();
            let mut f = FnObjective::new(k, move |w: &[f64]| {
                -w.iter().zip(&ws).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            });
            let theta0 = GaussianModel::isotropic(&vec![0.0; k], 4.0);
            let out = ce_optimize(&mut f, &theta0, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let err = out
                .w_final
                .iter()
                .zip(&wstar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let ok = errs.iter().filter(|e| **e < 0.05).count();
        pass &= ok >= 4;
        parts.push(format!("k2={k}: {ok}/5 errors {}", fmt(&errs)));
    }
    let elapsed = start.elapsed();
    verdict(
        pass && elapsed < Duration::from_secs(300),
        format!("{}; runtime {}", parts.join("; "), secs(elapsed)),
    )
}

fn criterion8b() -> Verdict {
    let start = Instant::now();
    let mdp = build_self_drive(SelfDriveTerminal::Restart, 0.99, 0.0).unwrap();
    let n = mdp.num_states();
    let phi = self_drive_features();
    let prediction = TabularFeatures(phi.clone());
    let fam = SoftmaxFamily {
        features: StateTimesAction { num_actions: 2 },
        temperature: SELF_DRIVE_TEMPERATURE,
    };
    let b = fam.policy(&[0.0]).unwrap();
    let tb = b.table(n);
    let perf = Performance::SinSquaredState;
    let lambda = SELF_DRIVE_LAMBDA;
    let jb = |w: &[f64]| -> offpolicy_ce::Result<f64> {
        let t = fam.policy(w)?.table(n);
        exact_objective_behaviour(&mdp, &t, &tb, lambda, &perf, &phi)
    };
    let grid: Vec<Vec<f64>> = linspace(-20.0, 20.0, 401).into_iter().map(|w| vec![w]).collect();
    let (_, best) = grid_search_oracle(&grid, |w| jb(w)).unwrap();
    let len = 2000;
    let mut cfg = desk_config();
    cfg.length = LengthRule::Constant { n: len };
    cfg.max_iterations = 5000;
    let mut ratios = Vec::new();
    for seed in 0..SEEDS {
        let store = generate_trajectory(&TabularEnv::new(mdp.clone()), &b, len, seed).unwrap();
        let mut pc = PredictConfig::new(lambda, mdp.discount());
        pc.ridge = 1.0;
        let mut obj = PredictObjective::new(store.records(), &prediction, &b, fam.clone(), pc, perf.clone()).unwrap();
        let theta0 = GaussianModel::isotropic(&[0.0], 100.0);
        let out = ce_optimize(&mut obj, &theta0, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
        ratios.push(jb(&out.w_final).unwrap() / best);
    }
    let ok = ratios.iter().filter(|r| **r >= 0.95).count();
    let elapsed = start.elapsed();
    verdict(
        ok >= 4 && elapsed < Duration::from_secs(300),
        format!("J_b(w_final)/grid optimum {} ({ok}/5 >= 0.95); runtime {}", fmt(&ratios), secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 9

fn criterion9() -> Verdict {
    let start = Instant::now();
    let n = 450;
    let len = 20_000;
    let mdp = build_chain_walk(n).unwrap();
    let rbf = RbfSpec::uniform(n, 5);
    let phi = feature_matrix(&rbf, n);
    let fam = SoftmaxFamily {
        features: ActionBlocks { base: rbf.clone(), num_actions: 2 },
        temperature: 1.0,
    };
    let wb = vec![0.0; 10];
    let b = fam.policy(&wb).unwrap();
    let tb = b.table(n);
    let lambda = 0.1;
    let unit = Performance::Square { scale: 1.0 };
    let jb = |w: &[f64]| {
        exact_objective_behaviour(&mdp, &fam.policy(w).unwrap().table(n), &tb, lambda, &unit, &phi).unwrap()
    };
    let j_behaviour = jb(&wb);
    let rewards = chain_walk_reward_states(n);
    let mut improved = 0;
    let mut windows = 0;
    let mut rows = Vec::new();
    for seed in 0..SEEDS {
        let env = TabularEnv { mdp: mdp.clone(), start: Some(n / 2) };
        let store = generate_trajectory(&env, &b, len, seed).unwrap();
        let visits: Vec<usize> = rewards
            .iter()
            .map(|r| store.records().iter().filter(|t| t.state == *r).count())
            .collect();
        let mut pc = PredictConfig::new(lambda, mdp.discount());
        pc.ridge = 100.0;
        pc.solver = Solver::ShermanMorrison;
        let mut probe = PredictObjective::new(store.records(), &rbf, &b, fam.clone(), pc.clone(), unit.clone()).unwrap();
        let scale = 1.0 / probe.evaluate(&wb, len).unwrap();
        let perf = Performance::Square { scale };
        let mut obj = PredictObjective::new(store.records(), &rbf, &b, fam.clone(), pc, perf).unwrap();
        let cfg = CeConfig {
            rho: 0.05,
            epsilon: 0.9,
            beta: Schedule::constant(0.2),
            beta_bar: AveragingSchedule::Off,
            zeta: MixingSchedule::Constant { value: 0.0 },
            c: Schedule::constant(0.08),
            r: 0.01,
            length: LengthRule::Constant { n: len },
            max_iterations: 1500,
            ..CeConfig::table_defaults(len)
        };
        let theta0 = GaussianModel::isotropic(&wb, 1.0);
        match ce_optimize(&mut obj, &theta0, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + seed)) {
            Ok(out) => {
                let j = jb(&out.w_final);
                let tw = fam.policy(&out.w_final).unwrap().table(n);
                let r1 = if visits[0] >= visits[1] { rewards[0] } else { rewards[1] };
                let before = (r1 - 10..r1).filter(|&s| tw[(s, RIGHT)] > tw[(s, LEFT)]).count();
                let after = (r1 + 1..=r1 + 10).filter(|&s| tw[(s, LEFT)] > tw[(s, RIGHT)]).count();
                improved += (j > j_behaviour) as usize;
                windows += (before == 10 && after == 10) as usize;
                rows.push(format!(
                    "seed {seed}: J_b {j:.4} (x{:.2}), reward {r1}, R before {before}/10, L after {after}/10",
                    j / j_behaviour
                ));
            }
            Err(e) => rows.push(format!("seed {seed}: error {e}")),
        }
    }
    let elapsed = start.elapsed();
    verdict(
        improved == 5 && windows == 5 && elapsed < Duration::from_secs(600),
        format!(
            "J_b(uniform) {j_behaviour:.4}; improved {improved}/5, window {windows}/5; {}; runtime {}",
            rows.join("; "),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 10

const SUITES: [&str; 8] = [
    "analysis_invariants",
    "ce_invariants",
    "env_invariants",
    "lstd_invariants",
    "mdp_invariants",
    "policy_invariants",
    "trajectory_invariants",
    "cli_invariants",
];

/// The newest compiled test binary named `<stem>-<hash>` next to this one.
fn latest_binary(dir: &Path, stem: &str) -> Option<PathBuf> {
    let prefix = format!("{stem}-");
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(&prefix)
                && p.extension().is_none()
                && name[prefix.len()..].chars().all(|c| c.is_ascii_hexdigit())
        })
        .max_by_key(|p| p.metadata().and_then(|m| m.modified()).unwrap_or(SystemTime::UNIX_EPOCH))
}

fn criterion10() -> Verdict {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap();
    let mut bad = Vec::new();
    let mut ran = 0;
    for stem in SUITES {
        match latest_binary(dir, stem) {
            None => bad.push(format!("{stem}: not built")),
            Some(bin) => {
                let out = Command::new(&bin).arg("--quiet").output();
                match out {
                    Ok(o) if o.status.success() => ran += 1,
                    Ok(_) => bad.push(format!("{stem}: failed")),
                    Err(e) => bad.push(format!("{stem}: {e}")),
                }
            }
        }
    }
    let detail = if bad.is_empty() {
        format!("{ran}/{} suites green", SUITES.len())
    } else {
        format!("{ran}/{} suites green; {}", SUITES.len(), bad.join(", "))
    };
    verdict(bad.is_empty(), detail)
}

// ----------------------------------------------------------------

fn report(id: &str, v: &Verdict) {
    println!("criterion {id}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut all = true;
    let mut run = |id: &str, v: Verdict| {
        report(id, &v);
        all &= v.pass;
    };
    let cp = chain_prediction();
    run("1", settings_verdict(&cp.x_ok, cp.elapsed));
    run("2", settings_verdict(&cp.ell_ok, cp.elapsed));
    let worst = cp.onpolicy.iter().cloned().fold(0.0, f64::max);
    run(
        "3",
        verdict(
            cp.onpolicy.iter().all(|e| *e < 0.05),
            format!("relative projection errors {} (worst {worst:.4})", fmt(&cp.onpolicy)),
        ),
    );
    run("4", criterion4());
    run("5", criterion5());
    run("6", criterion6());
    run("7", criterion7());
    run("8a", criterion8a());
    run("8b", criterion8b());
    run("9", criterion9());
    run("10", criterion10());
    if !all {
        std::process::exit(1);
    }
}
