use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use offce::config::ExperimentConfig;
use offce::output::{aggregate_rows_from, emit_outputs, load_run, svg_plot, write_rows};
use offce::problem::tabular_parts;
use offce::run::{generate_path, predict_at, run_experiment, TrialStatus};
use offce::CliError;
use offpolicy_ce::analysis::{
    check_ingredient_bounds, check_offpolicy_error_bound, check_onpolicy_bound, reported_bounds, sweep_bounds,
    BoundReport, SWEEP_COMBOS,
};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Off-policy cross-entropy policy search experiments.
///
/// Exit codes: 0 success, 1 configuration or i/o error, 2 numerical
/// failure, 3 bound violation.
#[derive(Parser, Debug)]
#[command(name = "offce", version)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Replace the seed list by seed, seed+1, … (one per trial).
    #[arg(short, long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one behaviour path and store it as `trajectory-<seed>.txt`.
    GenTraj {
        /// Path length; defaults to the config's.
        #[arg(long)]
        length: Option<usize>,
    },
    /// Estimate Ĵ(w) on the behaviour path of the first seed.
    Predict {
        /// Comma-separated policy parameter; defaults to the behaviour vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<f64>>,
    },
    /// Run every trial and write CSV outputs.
    Optimize {
        /// Also write plot.svg of this aggregate series (sample, gamma, reported).
        #[arg(long)]
        plot: Option<String>,
    },
    /// Check the approximation-error inequalities on the configured tabular MDP.
    VerifyBounds {
        /// Target policy parameter; defaults to the behaviour vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<f64>>,
        /// Random vector pairs for the operator checks.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Check the inequalities over random small MDPs.
    SweepBounds {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
    },
    /// Summarize a finished run directory (the --out directory).
    Report {
        /// Also write plot.svg of this aggregate series.
        #[arg(long)]
        plot: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn first_seed(cfg: &ExperimentConfig) -> Result<u64, CliError> {
    cfg.seeds
        .first()
        .copied()
        .ok_or_else(|| CliError::Config("the config has no seeds".into()))
}

const BOUNDS_HEADER: &[&str] = &[
    "name",
    "lhs",
    "rhs",
    "slack",
    "asserted",
    "hypothesis_met",
    "instance",
    "gamma",
    "lambda",
    "epsilon2",
    "note",
];

fn finish_bounds(dir: &Path, file: &str, reports: &[BoundReport]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join(file), BOUNDS_HEADER, reports)?;
    let asserted = reports.iter().filter(|r| r.asserted).count();
    let bad: Vec<&BoundReport> = reports.iter().filter(|r| r.violated()).collect();
    println!(
        "{} checks, {asserted} asserted, {} violated; details in {}",
        reports.len(),
        bad.len(),
        dir.join(file).display()
    );
    for r in &bad {
        println!("violated {}: lhs {:e} > rhs {:e} ({})", r.name, r.lhs, r.rhs, r.note);
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::BoundViolation(bad.len()))
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenTraj { length } => {
            let mut cfg = load_config(cli)?;
            cfg.validate()?;
            if length.is_some() {
                cfg.trajectory.length = *length;
            }
            let seed = first_seed(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("trajectory-{seed}.txt"));
            let n = generate_path(&cfg, seed, &path)?;
            println!("{n} transitions written to {}", path.display());
        }
        Command::Predict { weights } => {
            let cfg = load_config(cli)?;
            let seed = first_seed(&cfg)?;
            let w = weights.clone().unwrap_or_else(|| cfg.behaviour.clone());
            let summary = predict_at(&cfg, seed, &w)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("predict.json");
            std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
            println!(
                "J_hat = {} over {} transitions (seed {}); solution {:?}",
                summary.objective, summary.transitions, summary.seed, summary.solution
            );
        }
        Command::Optimize { plot } => {
            let cfg = load_config(cli)?;
            let records = run_experiment(&cfg)?;
            emit_outputs(&cfg.output_dir, &cfg, &records, plot.as_deref())?;
            for r in &records {
                println!(
                    "trial {} seed {}: {:?}, {} iterations, {} updates, J_hat(final) {:?}, J_hat(w_b) {:?}",
                    r.trial,
                    r.seed,
                    r.status,
                    r.rows.len(),
                    r.updates,
                    r.objective_final,
                    r.objective_behaviour
                );
            }
            info!("outputs in {}", cfg.output_dir.display());
            let failed: Vec<_> = records.iter().filter(|r| r.status != TrialStatus::Ok).collect();
            if let Some(first) = failed.first() {
                let msg = format!("{} of {} trials failed", failed.len(), records.len());
                return Err(match first.status {
                    TrialStatus::NumericalError => CliError::Numerical(msg),
                    _ => CliError::Config(msg),
                });
            }
        }
        Command::VerifyBounds { weights, pairs } => {
            let cfg = load_config(cli)?;
            cfg.validate()?;
            let parts = tabular_parts(&cfg.environment)?;
            let w = weights.clone().unwrap_or_else(|| cfg.behaviour.clone());
            let target = parts.table(&w)?;
            let behaviour = parts.table(&cfg.behaviour)?;
            let lambda = cfg.predict.lambda;
            let mut reports = vec![
                check_offpolicy_error_bound(&parts.mdp, &target, &behaviour, lambda, &parts.phi)?,
                check_onpolicy_bound(&parts.mdp, &target, lambda, &parts.phi)?,
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(first_seed(&cfg)?);
            reports.extend(check_ingredient_bounds(
                &parts.mdp, &target, &behaviour, lambda, &parts.phi, *pairs, &mut rng,
            )?);
            reports.extend(reported_bounds(&parts.mdp, &target, &behaviour, lambda, &parts.phi)?);
            finish_bounds(&cfg.output_dir, "bounds.csv", &reports)?;
        }
        Command::SweepBounds {
            instances,
            pairs,
            base_seed,
        } => {
            let base = cli.seed.unwrap_or(*base_seed);
            let reports = sweep_bounds(*instances, base, &SWEEP_COMBOS, *pairs)?;
            finish_bounds(&out_dir(cli), "sweep.csv", &reports)?;
        }
        Command::Report { plot } => {
            let dir = out_dir(cli);
            let (runs, audits) = load_run(&dir)?;
            println!("trial,seed,status,iterations,updates,objective_final,objective_behaviour");
            for r in &runs {
                let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                println!(
                    "{},{},{:?},{},{},{},{}",
                    r.trial,
                    r.seed,
                    r.status,
                    r.iterations,
                    r.updates,
                    f(r.objective_final),
                    f(r.objective_behaviour)
                );
            }
            let finals: Vec<f64> = runs.iter().filter_map(|r| r.objective_final).collect();
            if !finals.is_empty() {
                let m = finals.iter().sum::<f64>() / finals.len() as f64;
                println!("mean J_hat(final) over {} trials: {m}", finals.len());
            }
            if let Some(series) = plot {
                let agg = aggregate_rows_from(&dir, &audits)?;
                std::fs::write(dir.join("plot.svg"), svg_plot(&agg, series))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        2 => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("offce: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
