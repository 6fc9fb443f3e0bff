//! The three pipelines behind the `solve`, `compare` and `validate`
//! subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use impulse_sip::grid::ProblemGrid;
use impulse_sip::oracle::{self, ComparisonReport, Outcome, RandomInstanceOptions};
use impulse_sip::problem::drift;
use impulse_sip::reconstruction::boundary_residual;
use impulse_sip::{propagate, reconstruct, solve_dual, DualStatus, Error, ImpulsePlan, SipOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    dual_norm_rows, metrics, throttle_rows, trajectory_rows, DualSummary, PlanSummary, ResultBundle, RunSettings,
    RunStatus, Runtimes, SolverKind, FORMAT_VERSION,
};
use crate::error::{CliError, CliResult};
use crate::scenario::{BuiltScenario, Scenario};

/// Command-line overrides applied on top of the scenario's solver block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flags {
    pub epsilon: Option<f64>,
    pub lambda_max: Option<f64>,
    pub grid_scale: Option<f64>,
}

impl Flags {
    fn grid_scale(&self) -> f64 {
        self.grid_scale.unwrap_or(1.0)
    }

    fn options(&self, base: SipOptions) -> CliResult<SipOptions> {
        let mut o = base;
        if let Some(e) = self.epsilon {
            o.epsilon = e;
        }
        if let Some(l) = self.lambda_max {
            o.lambda_max = l;
        }
        o.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(o)
    }
}

fn build(scenario: &Scenario, flags: &Flags) -> CliResult<BuiltScenario> {
    let mut built = scenario.build(flags.grid_scale())?;
    built.options = flags.options(built.options)?;
    Ok(built)
}

/// Runs one scenario end to end and assembles the result bundle.
pub fn solve(scenario: &Scenario, flags: &Flags, solver: SolverKind) -> CliResult<ResultBundle> {
    let start = Instant::now();
    let built = build(scenario, flags)?;
    let problem = &built.problem;
    let opts = built.options;
    let mut runtimes = Runtimes::default();

    let (status, dual, plan) = match solver {
        SolverKind::Sip => {
            let mut dual = solve_dual(problem, &opts)?;
            runtimes.solve = dual.solve_time;
            let status = match dual.status {
                DualStatus::Optimal => RunStatus::Optimal,
                DualStatus::PrimalInfeasible => RunStatus::PrimalInfeasible,
                DualStatus::IterationLimit => RunStatus::IterationLimit,
            };
            let plan = if status == RunStatus::Optimal {
                let plan = reconstruct(problem, &mut dual, &opts)?;
                runtimes.reconstruction = plan.solve_time;
                Some(plan)
            } else {
                None
            };
            (status, Some(dual), plan)
        }
        SolverKind::Direct => match oracle::DirectTranscription::new(problem).solve(problem, &opts.tolerances) {
            Ok(plan) => {
                runtimes.solve = plan.solve_time;
                (RunStatus::Optimal, None, Some(plan))
            }
            Err(Error::Infeasible(_)) => (RunStatus::PrimalInfeasible, None, None),
            Err(e) => return Err(e.into()),
        },
    };

    let series_start = Instant::now();
    let plan_summary = plan.as_ref().map(|p| PlanSummary::from_plan(p, &built));
    let trajectory = match &plan {
        Some(p) => trajectory_rows(&propagate(problem, p, &built.output_grid), built.roe.as_ref())?,
        None => Vec::new(),
    };
    let dual_norm = match (&dual, status) {
        (Some(d), RunStatus::Optimal) => {
            dual_norm_rows(&ProblemGrid::new(problem), &built, d.lambda_f.as_slice(), &d.sigma)
        }
        _ => Vec::new(),
    };
    let throttle = plan_summary.as_ref().map(throttle_rows).unwrap_or_default();
    let metrics = plan.as_ref().map(|_| metrics(&trajectory));
    runtimes.series = series_start.elapsed().as_secs_f64();
    runtimes.total = start.elapsed().as_secs_f64();

    Ok(ResultBundle {
        format_version: FORMAT_VERSION,
        scenario: scenario.clone(),
        run: RunSettings {
            solver,
            epsilon: opts.epsilon,
            lambda_max: opts.lambda_max,
            max_outer_iters: opts.max_outer_iters,
            grid_scale: flags.grid_scale(),
        },
        status,
        dual: dual.as_ref().map(DualSummary::from_solution),
        plan: plan_summary,
        metrics,
        trajectory,
        dual_norm,
        throttle,
        runtimes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub scenario: String,
    pub impulse_unit: f64,
    /// Physical ΔV of each plan, `cost · impulse_unit`.
    pub sip_dv: Option<f64>,
    pub direct_dv: Option<f64>,
    pub report: ComparisonReport,
}

impl ScenarioComparison {
    pub fn exit_code(&self) -> i32 {
        let r = &self.report;
        match (r.agree, r.sip_outcome, r.direct_outcome) {
            (true, Outcome::Optimal, Outcome::Optimal) => 0,
            (true, Outcome::Infeasible, Outcome::Infeasible) => 2,
            _ => 1,
        }
    }
}

pub fn compare_scenario(scenario: &Scenario, flags: &Flags) -> CliResult<ScenarioComparison> {
    let built = build(scenario, flags)?;
    let report = oracle::compare(&built.problem, &built.options)?;
    Ok(ScenarioComparison {
        scenario: scenario.name.clone(),
        impulse_unit: built.impulse_unit,
        sip_dv: report.sip_cost.map(|c| c * built.impulse_unit),
        direct_dv: report.direct_cost.map(|c| c * built.impulse_unit),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub seed: u64,
    pub report: Option<ComparisonReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub first_seed: u64,
    pub count: usize,
    pub agreements: usize,
    pub infeasible_instances: usize,
    pub max_relative_gap: f64,
    pub all_agree: bool,
    pub instances: Vec<BatchEntry>,
}

/// Random double-integrator instances `first_seed .. first_seed + count`,
/// solved concurrently and reported in seed order.
pub fn compare_batch(first_seed: u64, count: usize, flags: &Flags) -> CliResult<BatchReport> {
    let opts = flags.options(SipOptions::default())?;
    let instances: Vec<BatchEntry> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = first_seed + i;
            let result = oracle::random_instance(seed, RandomInstanceOptions::default())
                .and_then(|p| oracle::compare(&p, &opts));
            match result {
                Ok(r) => BatchEntry { seed, report: Some(r), error: None },
                Err(e) => BatchEntry { seed, report: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let reports: Vec<&ComparisonReport> = instances.iter().filter_map(|e| e.report.as_ref()).collect();
    let agreements = reports.iter().filter(|r| r.agree).count();
    Ok(BatchReport {
        first_seed,
        count,
        agreements,
        infeasible_instances: reports.iter().filter(|r| r.direct_outcome == Outcome::Infeasible).count(),
        max_relative_gap: reports.iter().filter_map(|r| r.relative_gap).fold(0.0, f64::max),
        all_agree: agreements == count,
        instances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Relative slack on `D(S^(j+1)) <= D(S^(j))`.
pub const MONOTONE_SLACK: f64 = 1e-7;
/// `σ_k` above this marks a window as carrying an active cap.
pub const SIGMA_ACTIVE: f64 = 1e-8;
/// Relative tolerance on boundary residuals.
pub const RESIDUAL_TOL: f64 = 1e-6;
pub const SATURATION_TOL: f64 = 1e-6;

/// Re-derives every invariant a bundle should satisfy from its own contents.
pub fn validate(bundle: &ResultBundle) -> CliResult<Vec<Check>> {
    let flags = Flags { grid_scale: Some(bundle.run.grid_scale), ..Flags::default() };
    let built = build(&bundle.scenario, &flags)?;
    let problem = &built.problem;
    let windows = problem.windows();
    let mut checks = Vec::new();

    checks.push(check("status", bundle.status == RunStatus::Optimal, format!("{:?}", bundle.status)));
    let Some(plan) = &bundle.plan else {
        checks.push(check("plan_present", false, "bundle carries no impulse plan".into()));
        return Ok(checks);
    };

    let grouped = plan.grouped(windows.len());
    let in_windows = plan.impulses.iter().all(|r| windows.get(r.window).is_some_and(|w| w.contains(r.time)));
    checks.push(check("impulse_times_in_windows", in_windows, format!("{} impulses", plan.impulses.len())));

    let dims_ok = plan.impulses.iter().all(|r| r.vector.len() == problem.input_dim());
    let b = drift(problem).0;
    let (residual_ok, residual_detail) = if dims_ok {
        let r = boundary_residual(problem, &grouped).norm();
        let tol = RESIDUAL_TOL * b.norm().max(1.0);
        (r <= tol, format!("|residual| = {r:.3e}, tolerance {tol:.1e}"))
    } else {
        (false, "impulse vectors have the wrong dimension".into())
    };
    checks.push(check("boundary_residual", residual_ok, residual_detail));
    if !dims_ok {
        return Ok(checks);
    }

    let recomputed = ImpulsePlan::from_impulses(problem, grouped);
    let costs_ok =
        recomputed.window_costs.iter().zip(&plan.window_costs).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
            && (recomputed.total_cost - plan.total_cost).abs() <= 1e-9 * plan.total_cost.abs().max(1.0);
    checks.push(check(
        "recorded_costs",
        costs_ok,
        format!("recomputed total {:.12} vs recorded {:.12}", recomputed.total_cost, plan.total_cost),
    ));

    let worst_cap = windows
        .iter()
        .zip(&recomputed.window_costs)
        .filter(|(w, _)| w.is_capped())
        .map(|(w, c)| c - w.dv_max)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "window_caps",
        worst_cap <= SATURATION_TOL,
        if worst_cap.is_finite() {
            format!("largest cost - cap = {worst_cap:.3e}")
        } else {
            "no capped windows".into()
        },
    ));

    let Some(dual) = &bundle.dual else {
        return Ok(checks);
    };
    if dual.sigma.len() != windows.len() {
        checks.push(check(
            "sigma_dimension",
            false,
            format!("{} multipliers for {} windows", dual.sigma.len(), windows.len()),
        ));
        return Ok(checks);
    }

    let gap = (recomputed.total_cost - dual.objective).abs() / dual.objective.abs().max(1.0);
    checks.push(check(
        "duality_gap",
        gap <= 2.0 * bundle.run.epsilon,
        format!("|P - D| / max(1, |D|) = {gap:.3e}, bound {:.1e}", 2.0 * bundle.run.epsilon),
    ));

    let mut worst_product: f64 = 0.0;
    let mut mismatched = Vec::new();
    for (k, w) in windows.iter().enumerate() {
        if !w.is_capped() {
            continue;
        }
        let cost = recomputed.window_costs[k];
        let sigma = dual.sigma[k];
        worst_product = worst_product.max((sigma * (w.dv_max - cost)).abs() / w.dv_max.max(1.0));
        let saturated = w.dv_max > 0.0 && cost >= w.dv_max * (1.0 - SATURATION_TOL);
        if (sigma > SIGMA_ACTIVE) != saturated {
            mismatched.push(k);
        }
    }
    checks.push(check(
        "complementary_slackness",
        worst_product <= SATURATION_TOL,
        format!("max |σ_k (cap_k - cost_k)| / max(1, cap_k) = {worst_product:.3e}"),
    ));
    checks.push(check(
        "saturation_equivalence",
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "σ_k > 1e-8 exactly on saturated windows".into()
        } else {
            format!("mismatched windows {mismatched:?}")
        },
    ));

    let uncapped_nonzero: Vec<usize> =
        windows.iter().enumerate().filter(|(k, w)| !w.is_capped() && dual.sigma[*k] != 0.0).map(|(k, _)| k).collect();
    checks.push(check(
        "uncapped_sigma_zero",
        uncapped_nonzero.is_empty(),
        if uncapped_nonzero.is_empty() {
            "σ_k = 0 on every uncapped window".into()
        } else {
            format!("nonzero on {uncapped_nonzero:?}")
        },
    ));

    let rises: Vec<usize> = dual
        .objective_history
        .windows(2)
        .enumerate()
        .filter(|(_, p)| p[1] > p[0] + MONOTONE_SLACK * p[0].abs().max(1.0))
        .map(|(j, _)| j + 1)
        .collect();
    checks.push(check(
        "monotone_dual_history",
        rises.is_empty(),
        if rises.is_empty() {
            format!("{} nonincreasing iterates", dual.objective_history.len())
        } else {
            format!("increase at iterations {rises:?}")
        },
    ));
    Ok(checks)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
    }
    let text = serde_json::to_string_pretty(value).expect("reports hold only finite numbers");
    std::fs::write(path, text).map_err(|source| CliError::Write { path: PathBuf::from(path), source })
}
