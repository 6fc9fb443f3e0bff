use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impulse_sip_cli::commands::{compare_batch, compare_scenario, solve, validate, write_json, Flags};
use impulse_sip_cli::{CliError, ResultBundle, Scenario, SolverKind};

#[derive(Parser)]
#[command(name = "impulse-sip", version, about = "Minimum-fuel impulsive transfers with per-window ΔV caps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write the result bundle and CSV series.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverKind::Sip)]
        solver: SolverKind,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Cross-check the SIP solver against the direct transcription.
    Compare {
        #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
        scenario: Option<PathBuf>,
        /// Number of seeded random double-integrator instances.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Re-check the invariants of a result bundle.
    Validate {
        /// A `result.json` written by `solve`.
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        bundle: Option<PathBuf>,
        /// Solve this scenario in memory and check the result.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        flags: FlagArgs,
    },
}

#[derive(Args)]
struct FlagArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Multiplier on every window's grid count.
    #[arg(long)]
    grid_scale: Option<f64>,
}

impl From<FlagArgs> for Flags {
    fn from(a: FlagArgs) -> Self {
        Flags { epsilon: a.epsilon, lambda_max: a.lambda_max, grid_scale: a.grid_scale }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Solve { scenario, out, solver, flags } => {
            let scenario = Scenario::load(&scenario)?;
            let bundle = solve(&scenario, &flags.into(), solver)?;
            bundle.write(&out)?;
            println!("scenario: {}", scenario.name);
            println!("status: {:?}", bundle.status);
            if let Some(d) = &bundle.dual {
                println!(
                    "dual objective: {:.10} ({} iterations, |lambda| = {:.6e})",
                    d.objective, d.iterations, d.lambda_norm
                );
            }
            if let Some(p) = &bundle.plan {
                println!("total cost: {:.10} units = {:.6} m/s", p.total_cost, p.total_dv);
                println!("impulses: {}", p.impulses.len());
            }
            if let Some(rn) = bundle.metrics.as_ref().and_then(|m| m.min_rn_separation) {
                println!("min RN separation: {:.6} km", rn);
            }
            println!("runtime: {:.3} s", bundle.runtimes.total);
            println!("wrote {}", out.display());
            Ok(bundle.status.exit_code())
        }
        Command::Compare { scenario, batch, seed, out, flags } => {
            let flags: Flags = flags.into();
            if let Some(count) = batch {
                let report = compare_batch(seed, count, &flags)?;
                write_json(&out.join("batch_compare.json"), &report)?;
                println!(
                    "{}/{} instances agree ({} infeasible), max relative gap {:.3e}",
                    report.agreements, report.count, report.infeasible_instances, report.max_relative_gap
                );
                return Ok(if report.all_agree { 0 } else { 1 });
            }
            let path = scenario.expect("clap requires a scenario without --batch");
            let scenario = Scenario::load(&path)?;
            let cmp = compare_scenario(&scenario, &flags)?;
            write_json(&out.join("compare.json"), &cmp)?;
            let r = &cmp.report;
            println!("scenario: {}", cmp.scenario);
            println!(
                "sip: {:?} cost {:?} ({} variables, {:.3} s)",
                r.sip_outcome, r.sip_cost, r.sip_variables, r.sip_time
            );
            println!(
                "direct: {:?} cost {:?} ({} impulse variables, {:.3} s)",
                r.direct_outcome, r.direct_cost, r.direct_variables, r.direct_time
            );
            println!("agree: {}", r.agree);
            Ok(cmp.exit_code())
        }
        Command::Validate { bundle, scenario, flags } => {
            let bundle = match (bundle, scenario) {
                (Some(path), _) => ResultBundle::load(&path)?,
                (None, Some(path)) => solve(&Scenario::load(&path)?, &flags.into(), SolverKind::Sip)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let checks = validate(&bundle)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    // Code 2 means infeasible, so argument errors use the IO/schema code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
