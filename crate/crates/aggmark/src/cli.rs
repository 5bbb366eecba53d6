//! Batch front end behind the `aggmark` binary.
//!
//! `aggmark run <config>` values the configured contract and writes
//! `cashflows.csv`, `reserves.csv`, and `report.json` to the output
//! directory. `aggmark verify <config>` runs the same analytic valuation
//! plus the Monte Carlo oracle and writes `verify_report.json` with one
//! z-score per conditioning row, exiting nonzero when any |z| > 4.
//!
//! Outputs are a pure function of the effective configuration: no
//! timestamps or timings are emitted, every file starts with the config
//! hash, and floats are written with 17 significant digits, so reruns are
//! byte-identical. `AGGMARK_THREADS` caps internal parallelism.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde_json::json;

use crate::cashflow::{
    expected_cashflows_reset, fast_path_cashflow, reserve, write_cashflow_csv, CashFlowTable,
    Conditioning, PaymentSpec,
};
use crate::config::RunConfig;
use crate::model::AggregateModel;
use crate::phb::{self, BehaviourSpec};
use crate::sim::{discounted_payments, discounted_payments_scaled, monte_carlo, PathSampler};
use crate::{Error, Result, TimeGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "aggmark",
    version,
    about = "Valuation engine for aggregate Markov life insurance models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value the configured contract: cash flows, reserves, report.
    Run(JobArgs),
    /// Value and cross-check against the Monte Carlo oracle.
    Verify(JobArgs),
}

#[derive(Debug, Args)]
struct JobArgs {
    /// JSON run configuration.
    config: PathBuf,
    /// Override the number of grid steps.
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Override the number of ODE substeps per grid step.
    #[arg(long)]
    substeps: Option<usize>,
    /// Override the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

/// Entry point with explicit arguments, for tests.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { EXIT_OK } else { EXIT_CONFIG };
        }
    };
    init_threads();
    let (job, verify) = match &cli.command {
        Command::Run(job) => (job, false),
        Command::Verify(job) => (job, true),
    };
    match execute(job, verify) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn init_threads() {
    if let Ok(value) = std::env::var("AGGMARK_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Configuration and input problems exit 2, runtime numerical failures
/// exit 3; verification failures exit 4 via [`run_verify`]'s return value.
fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NumericalBlowup { .. }
        | Error::NullConditioning(_)
        | Error::NoJumpPossible { .. }
        | Error::ThinningBound { .. }
        | Error::InfeasibleConditioning { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn execute(job: &JobArgs, verify: bool) -> Result<i32> {
    let mut config = RunConfig::load(&job.config)?;
    if let Some(steps) = job.grid_steps {
        config.grid.steps = steps;
    }
    if let Some(substeps) = job.substeps {
        config.grid.substeps = substeps;
    }
    if let Some(seed) = job.seed {
        match &mut config.simulation {
            Some(sim) => sim.seed = seed,
            None => {
                return Err(Error::Config(
                    "--seed given but the config has no simulation block".into(),
                ))
            }
        }
    }
    if let Some(out) = &job.out {
        config.output_dir = out.clone();
    }
    let hash = config.hash();

    let model = load_model(&job.config, &config.model)?;
    for c in &config.conditioning {
        if c.state >= model.macro_count() {
            return Err(Error::Config(format!(
                "conditioning state {} is out of range: the model has {} macrostates",
                c.state,
                model.macro_count()
            )));
        }
    }
    let payments = config.payment_spec(&model)?;
    config.validate(&payments)?;
    let behaviour = config.behaviour_spec()?;
    if let Some(spec) = &behaviour {
        spec.validate(&model)?;
    }
    let grid = config.time_grid()?;
    model.validate(&validation_times(&model, &grid)).into_result()?;

    let conditioning: Vec<(usize, f64)> = config
        .conditioning
        .iter()
        .map(|c| (c.state, c.duration))
        .collect();
    let valuation =
        run_valuation(&model, &payments, behaviour.as_ref(), &conditioning, &grid)?;

    fs::create_dir_all(&config.output_dir)?;
    if verify {
        run_verify(&job.config, &config, &hash, &model, &payments, behaviour.as_ref(), &valuation)
    } else {
        write_run_outputs(&config, &hash, &model, &payments, &valuation, behaviour.is_some())?;
        Ok(EXIT_OK)
    }
}

fn load_model(config_path: &Path, model_path: &Path) -> Result<AggregateModel> {
    let path = RunConfig::resolve(config_path, model_path);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
    AggregateModel::from_json(&text)
}

/// Times at which the model's generator is checked: every grid node, a
/// coarse sweep of the pre-valuation period, and both sides of every rate
/// breakpoint.
fn validation_times(model: &AggregateModel, grid: &TimeGrid) -> Vec<f64> {
    let mut times: Vec<f64> = grid.points().to_vec();
    if grid.start() > 0.0 {
        for i in 0..16 {
            times.push(grid.start() * i as f64 / 16.0);
        }
    }
    let mut breaks = Vec::new();
    model.rate_breakpoints(&mut breaks);
    for b in breaks {
        times.push(b);
        times.push(b - 1e-9);
        times.push(b + 1e-9);
    }
    times.retain(|&t| t.is_finite() && t >= 0.0 && t <= grid.end());
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

struct Valuation {
    /// Requested rows in configuration order.
    table: CashFlowTable,
    /// Prospective reserve per row.
    reserves: Vec<f64>,
    fast_path_used: bool,
}

/// Value every requested conditioning row, sharing the expensive sweeps
/// across rows with the same duration. Behaviour scaling takes precedence;
/// otherwise duration-independent payments take the fast path.
fn run_valuation(
    model: &AggregateModel,
    payments: &PaymentSpec,
    behaviour: Option<&BehaviourSpec>,
    conditioning: &[(usize, f64)],
    grid: &TimeGrid,
) -> Result<Valuation> {
    let t = grid.start();
    let fast = payments.duration_independent && behaviour.is_none();
    let mut durations: Vec<f64> = Vec::new();
    for &(_, u) in conditioning {
        if !durations.contains(&u) {
            durations.push(u);
        }
    }
    let mut group_tables = Vec::with_capacity(durations.len());
    for &u in &durations {
        let table = if let Some(spec) = behaviour {
            phb::scaled_cashflow(model, spec, Conditioning::Duration { u }, t, grid, payments)?
        } else if fast {
            fast_path_cashflow(model, Conditioning::Duration { u }, t, grid, payments)?
        } else {
            expected_cashflows_reset(model, u, t, grid, payments)?
        };
        group_tables.push(table);
    }
    let times = group_tables[0].times.clone();
    let mut rates = Array2::zeros((conditioning.len(), times.len()));
    let mut accumulated = Array2::zeros((conditioning.len(), times.len()));
    let mut rows = Vec::with_capacity(conditioning.len());
    for (out_r, &(i, u)) in conditioning.iter().enumerate() {
        let g = durations.iter().position(|&v| v == u).expect("duration group");
        let table = &group_tables[g];
        let r = table
            .row_for_state(i)
            .ok_or_else(|| Error::Config(format!("no cash-flow row for macrostate {i}")))?;
        rates.row_mut(out_r).assign(&table.rates.row(r));
        accumulated.row_mut(out_r).assign(&table.accumulated.row(r));
        rows.push((i, u));
    }
    let table = CashFlowTable {
        start_time: t,
        times,
        rows,
        rates,
        accumulated,
    };
    let reserves = reserve(&table, &payments.interest);
    Ok(Valuation {
        table,
        reserves,
        fast_path_used: fast,
    })
}

fn write_run_outputs(
    config: &RunConfig,
    hash: &str,
    model: &AggregateModel,
    payments: &PaymentSpec,
    valuation: &Valuation,
    behaviour_applied: bool,
) -> Result<()> {
    let dir = &config.output_dir;

    let mut buf = Vec::new();
    writeln!(buf, "# config_hash={hash}")?;
    write_cashflow_csv(&mut buf, &valuation.table, &payments.interest)?;
    fs::write(dir.join("cashflows.csv"), &buf)?;

    let mut buf = Vec::new();
    writeln!(buf, "# config_hash={hash}")?;
    writeln!(buf, "initial_state,initial_duration,reserve")?;
    for (r, &(i, u)) in valuation.table.rows.iter().enumerate() {
        writeln!(buf, "{i},{u},{:.16e}", valuation.reserves[r])?;
    }
    fs::write(dir.join("reserves.csv"), &buf)?;

    let report = json!({
        "config_hash": hash,
        "model": {
            "macrostates": model.macro_count(),
            "micro_counts": model.micro_counts(),
            "reset": model.reset().is_some(),
        },
        "grid": {
            "start": config.grid.start,
            "end": config.grid.end,
            "steps": config.grid.steps,
            "substeps": config.grid.substeps,
            "spacing": (config.grid.end - config.grid.start) / config.grid.steps as f64,
        },
        "fast_path_used": valuation.fast_path_used,
        "behaviour_applied": behaviour_applied,
        "tolerances": {
            "blowup_threshold": crate::prodint::BLOWUP_THRESHOLD,
            "payment_shift": crate::cashflow::SIGMA_SHIFT,
            "simulation_edge_shift": crate::sim::EDGE_SHIFT,
        },
        "reserves": valuation
            .table
            .rows
            .iter()
            .zip(&valuation.reserves)
            .map(|(&(i, u), &v)| json!({"state": i, "duration": u, "reserve": v}))
            .collect::<Vec<_>>(),
        "outputs": ["cashflows.csv", "reserves.csv"],
    });
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;

    for (r, &(i, u)) in valuation.table.rows.iter().enumerate() {
        println!("reserve state={i} duration={u}: {}", valuation.reserves[r]);
    }
    for name in ["cashflows.csv", "reserves.csv", "report.json"] {
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn run_verify(
    config_path: &Path,
    config: &RunConfig,
    hash: &str,
    model: &AggregateModel,
    payments: &PaymentSpec,
    behaviour: Option<&BehaviourSpec>,
    valuation: &Valuation,
) -> Result<i32> {
    let sim = config.simulation.as_ref().ok_or_else(|| {
        Error::Config("verify needs a simulation block (n_paths, seed)".into())
    })?;
    let mc_model_override;
    let mc_model = match &sim.mc_model {
        Some(path) => {
            mc_model_override = load_model(config_path, path)?;
            &mc_model_override
        }
        None => model,
    };
    let t = valuation.table.start_time;
    let mut quantities = Vec::new();
    let mut max_abs_z: f64 = 0.0;
    for (r, &(i, u)) in valuation.table.rows.iter().enumerate() {
        let analytic = valuation.reserves[r];
        let sampler = PathSampler::Conditioned {
            state: i,
            duration: u,
            at: t,
            horizon: payments.horizon,
        };
        let seed = sim.seed.wrapping_add(r as u64);
        let estimate = match behaviour {
            Some(spec) => monte_carlo(mc_model, &sampler, sim.n_paths, seed, |p| {
                discounted_payments_scaled(p, payments, t, spec)
            })?,
            None => monte_carlo(mc_model, &sampler, sim.n_paths, seed, |p| {
                discounted_payments(p, payments, t)
            })?,
        };
        let z = (estimate.mean - analytic) / estimate.std_error.max(f64::MIN_POSITIVE);
        let pass = z.abs() <= 4.0;
        max_abs_z = max_abs_z.max(z.abs());
        println!(
            "verify reserve state={i} duration={u}: analytic={analytic} mc={} se={:.3e} z={z:+.2} {}",
            estimate.mean,
            estimate.std_error,
            if pass { "PASS" } else { "FAIL" },
        );
        quantities.push(json!({
            "quantity": format!("reserve[state={i},duration={u}]"),
            "state": i,
            "duration": u,
            "analytic": analytic,
            "mc_mean": estimate.mean,
            "mc_std_error": estimate.std_error,
            "n_paths": estimate.n,
            "z": z,
            "pass": pass,
        }));
    }
    let all_pass = max_abs_z <= 4.0;
    let report = json!({
        "config_hash": hash,
        "n_paths": sim.n_paths,
        "seed": sim.seed,
        "mc_model_override": sim.mc_model.is_some(),
        "quantities": quantities,
        "max_abs_z": max_abs_z,
        "pass": all_pass,
    });
    fs::write(
        config.output_dir.join("verify_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "verification {} (max |z| = {max_abs_z:.2})",
        if all_pass { "passed" } else { "FAILED" }
    );
    Ok(if all_pass { EXIT_OK } else { EXIT_VERIFY })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_the_error_enum() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code_for(&Error::InvalidModel("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code_for(&Error::Domain("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code_for(&Error::NumericalBlowup {
                time: 1.0,
                detail: "x".into()
            }),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code_for(&Error::ThinningBound {
                time: 1.0,
                rate: 2.0,
                bound: 1.0
            }),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code_for(&Error::InfeasibleConditioning { threshold: 1e-4 }),
            EXIT_NUMERICAL
        );
    }

    #[test]
    fn help_exits_zero_and_bad_usage_exits_two() {
        assert_eq!(main_with_args(["aggmark", "--help"]), EXIT_OK);
        assert_eq!(main_with_args(["aggmark"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["aggmark", "run"]), EXIT_CONFIG);
        assert_eq!(
            main_with_args(["aggmark", "run", "/nonexistent/config.json"]),
            EXIT_CONFIG
        );
    }
}
