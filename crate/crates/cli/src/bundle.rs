//! Result bundle: the JSON document written by `solve` and the rows of the
//! three CSV series derived from it.

use std::io::Write;
use std::path::Path;

use impulse_sip::grid::ProblemGrid;
use impulse_sip::reconstruction::SampleSide;
use impulse_sip::{dual_norm_value, norm_value, roe_to_rtn, DualSolution, ImpulsePlan, RoeModel, RtnState, Trajectory};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::scenario::{BuiltScenario, Scenario};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dual semi-infinite program with input reconstruction.
    Sip,
    /// Dense direct transcription.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Optimal,
    PrimalInfeasible,
    IterationLimit,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Optimal => 0,
            Self::PrimalInfeasible => 2,
            Self::IterationLimit => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub solver: SolverKind,
    pub epsilon: f64,
    pub lambda_max: f64,
    pub max_outer_iters: usize,
    pub grid_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub lambda_f: Vec<f64>,
    pub lambda_norm: f64,
    pub sigma: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub subproblem_variables: usize,
    pub violation_history: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub active_times: Vec<Vec<f64>>,
}

impl DualSummary {
    pub fn from_solution(d: &DualSolution) -> Self {
        Self {
            lambda_f: d.lambda_f.as_slice().to_vec(),
            lambda_norm: d.lambda_norm(),
            sigma: d.sigma.clone(),
            objective: d.objective,
            iterations: d.iterations,
            subproblem_variables: d.subproblem_variables,
            violation_history: d.violation_history.clone(),
            objective_history: d.objective_history.clone(),
            samples: d.samples.windows.clone(),
            active_times: d.active_times.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseRecord {
    pub window: usize,
    pub time: f64,
    /// Scaled impulse units.
    pub vector: Vec<f64>,
    /// Window norm of `vector`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub impulses: Vec<ImpulseRecord>,
    pub window_costs: Vec<f64>,
    /// `None` for uncapped windows.
    pub window_caps: Vec<Option<f64>>,
    pub saturated: Vec<bool>,
    /// Scaled impulse units.
    pub total_cost: f64,
    /// `total_cost · impulse_unit`.
    pub total_dv: f64,
    pub impulse_unit: f64,
    pub boundary_residual: Vec<f64>,
    pub solve_time: f64,
}

impl PlanSummary {
    pub fn from_plan(plan: &ImpulsePlan, built: &BuiltScenario) -> Self {
        let windows = built.problem.windows();
        Self {
            impulses: plan
                .iter()
                .map(|(k, i)| ImpulseRecord {
                    window: k,
                    time: i.time,
                    vector: i.vector.clone(),
                    magnitude: magnitude(windows[k].norm, &i.vector),
                })
                .collect(),
            window_costs: plan.window_costs.clone(),
            window_caps: windows.iter().map(|w| w.is_capped().then_some(w.dv_max)).collect(),
            saturated: plan.saturated.clone(),
            total_cost: plan.total_cost,
            total_dv: plan.total_cost * built.impulse_unit,
            impulse_unit: built.impulse_unit,
            boundary_residual: plan.boundary_residual.as_slice().to_vec(),
            solve_time: plan.solve_time,
        }
    }

    /// Impulses regrouped per window, in the order recorded.
    pub fn grouped(&self, windows: usize) -> Vec<Vec<impulse_sip::Impulse>> {
        let mut out = vec![Vec::new(); windows];
        for r in &self.impulses {
            if let Some(list) = out.get_mut(r.window) {
                list.push(impulse_sip::Impulse { time: r.time, vector: r.vector.clone() });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Smallest radial-normal separation over the trajectory, km.
    pub min_rn_separation: Option<f64>,
    pub min_rn_separation_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtimes {
    pub solve: f64,
    pub reconstruction: f64,
    pub series: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub side: SampleSide,
    pub state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtn: Option<RtnState>,
    /// km.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rn_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualNormRow {
    pub window: usize,
    pub t: f64,
    pub dual_norm: f64,
    /// `1 + σ_k`.
    pub threshold: f64,
    /// `B(t)' Φ(tf, t)' λ_f`.
    pub primer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleRow {
    pub window: usize,
    pub t: f64,
    pub vector: Vec<f64>,
    pub magnitude: f64,
    /// Window cost accumulated up to and including this impulse.
    pub cumulative_cost: f64,
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub format_version: u32,
    pub scenario: Scenario,
    pub run: RunSettings,
    pub status: RunStatus,
    pub dual: Option<DualSummary>,
    pub plan: Option<PlanSummary>,
    pub metrics: Option<Metrics>,
    pub trajectory: Vec<TrajectoryRow>,
    pub dual_norm: Vec<DualNormRow>,
    pub throttle: Vec<ThrottleRow>,
    pub runtimes: Runtimes,
}

impl ResultBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles hold only finite numbers")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
        Self::from_json(&text).map_err(|e| CliError::Bundle { path: path.into(), message: e.to_string() })
    }

    /// Writes `result.json`, `trajectory.csv`, `dual_norm.csv` and
    /// `throttle.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
        write_text(&dir.join("result.json"), &self.to_json())?;
        write_csv(&dir.join("trajectory.csv"), &self.trajectory_table())?;
        write_csv(&dir.join("dual_norm.csv"), &self.dual_norm_table())?;
        write_csv(&dir.join("throttle.csv"), &self.throttle_table())?;
        Ok(())
    }

    fn state_dim(&self) -> usize {
        self.scenario.boundary.x0.len()
    }

    pub fn trajectory_table(&self) -> Table {
        let nx = self.state_dim();
        let roe = self.trajectory.iter().any(|r| r.rtn.is_some());
        let mut header: Vec<String> = vec!["t".into(), "side".into()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        if roe {
            header.extend(["r_r", "r_t", "r_n", "v_r", "v_t", "v_n", "rn_separation"].map(String::from));
        }
        let rows = self
            .trajectory
            .iter()
            .map(|r| {
                let mut row = vec![num(r.t), side_label(r.side).into()];
                row.extend(r.state.iter().map(|v| num(*v)));
                if roe {
                    match &r.rtn {
                        Some(s) => row.extend(s.position.iter().chain(&s.velocity).map(|v| num(*v))),
                        None => row.extend((0..6).map(|_| String::new())),
                    }
                    row.push(r.rn_separation.map(num).unwrap_or_default());
                }
                row
            })
            .collect();
        Table { header, rows }
    }

    pub fn dual_norm_table(&self) -> Table {
        let nu = self.dual_norm.first().map(|r| r.primer.len()).unwrap_or(0);
        let mut header: Vec<String> = ["window", "t", "dual_norm", "threshold"].map(String::from).to_vec();
        header.extend((0..nu).map(|j| format!("primer{j}")));
        let rows = self
            .dual_norm
            .iter()
            .map(|r| {
                let mut row = vec![r.window.to_string(), num(r.t), num(r.dual_norm), num(r.threshold)];
                row.extend(r.primer.iter().map(|v| num(*v)));
                row
            })
            .collect();
        Table { header, rows }
    }

    pub fn throttle_table(&self) -> Table {
        let nu = self.throttle.first().map(|r| r.vector.len()).unwrap_or(0);
        let mut header: Vec<String> = vec!["window".into(), "t".into()];
        header.extend((0..nu).map(|j| format!("v{j}")));
        header.extend(["magnitude", "cumulative_cost", "cap"].map(String::from));
        let rows = self
            .throttle
            .iter()
            .map(|r| {
                let mut row = vec![r.window.to_string(), num(r.t)];
                row.extend(r.vector.iter().map(|v| num(*v)));
                row.extend([num(r.magnitude), num(r.cumulative_cost), r.cap.map(num).unwrap_or_default()]);
                row
            })
            .collect();
        Table { header, rows }
    }
}

fn side_label(side: SampleSide) -> &'static str {
    match side {
        SampleSide::Regular => "regular",
        SampleSide::PreImpulse => "pre",
        SampleSide::PostImpulse => "post",
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = std::fs::File::create(path).map_err(|source| CliError::Write { path: path.into(), source })?;
    f.write_all(text.as_bytes()).map_err(|source| CliError::Write { path: path.into(), source })
}

fn write_csv(path: &Path, table: &Table) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Write { path: path.into(), source: std::io::Error::other(e) };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Write { path: path.into(), source })
}

pub fn trajectory_rows(traj: &Trajectory, roe: Option<&RoeModel>) -> CliResult<Vec<TrajectoryRow>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .zip(&traj.sides)
        .map(|((&t, x), &side)| {
            let (rtn, rn) = match roe {
                Some(m) => {
                    let s = roe_to_rtn(m, t, x.as_slice())?;
                    (Some(s), Some(s.position[0].hypot(s.position[2])))
                }
                None => (None, None),
            };
            Ok(TrajectoryRow { t, side, state: x.as_slice().to_vec(), rtn, rn_separation: rn })
        })
        .collect()
}

pub fn dual_norm_rows(grid: &ProblemGrid, built: &BuiltScenario, lambda: &[f64], sigma: &[f64]) -> Vec<DualNormRow> {
    let lambda = DVector::from_column_slice(lambda);
    let windows = built.problem.windows();
    let mut rows = Vec::with_capacity(grid.total_points());
    for (k, wg) in grid.windows().iter().enumerate() {
        for (i, &t) in wg.times.iter().enumerate() {
            let primer = grid.primer(k, i, &lambda);
            let dual_norm = dual_norm_value(windows[k].norm, primer.as_slice()).expect("primer vectors are nonempty");
            rows.push(DualNormRow {
                window: k,
                t,
                dual_norm,
                threshold: 1.0 + sigma[k],
                primer: primer.as_slice().to_vec(),
            });
        }
    }
    rows
}

pub fn throttle_rows(plan: &PlanSummary) -> Vec<ThrottleRow> {
    let mut cumulative = vec![0.0; plan.window_costs.len()];
    plan.impulses
        .iter()
        .map(|r| {
            cumulative[r.window] += r.magnitude;
            ThrottleRow {
                window: r.window,
                t: r.time,
                vector: r.vector.clone(),
                magnitude: r.magnitude,
                cumulative_cost: cumulative[r.window],
                cap: plan.window_caps[r.window],
            }
        })
        .collect()
}

pub fn metrics(rows: &[TrajectoryRow]) -> Metrics {
    let min = rows.iter().filter_map(|r| r.rn_separation.map(|d| (d, r.t))).min_by(|a, b| a.0.total_cmp(&b.0));
    Metrics { min_rn_separation: min.map(|m| m.0), min_rn_separation_time: min.map(|m| m.1) }
}

/// Norm of a stored impulse under its window's norm.
pub fn magnitude(norm: impulse_sip::NormKind, v: &[f64]) -> f64 {
    norm_value(norm, v).unwrap_or(0.0)
}
