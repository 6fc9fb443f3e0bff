//! Dense direct-transcription primal solver: one impulse variable per grid
//! node, solved as a single conic program. Serves as the independent
//! reference for costs and feasibility.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, AffineRow, ConeKind, ConicProgram, Sense, SolveStatus, Tolerances};
use crate::dual_sip::{solve_dual, DualStatus, SipOptions};
use crate::error::{Error, Result};
use crate::grid::ProblemGrid;
use crate::norm::NormKind;
use crate::problem::{drift, ControlWindow, TransferProblem};
use crate::reconstruction::{reconstruct, Impulse, ImpulsePlan};
use crate::system::{DoubleIntegrator, InputProfile, LtvSystem};

/// Where each node's impulse lives in the assembled program.
#[derive(Debug, Clone, Copy)]
enum NodeVars {
    /// `v` then the epigraph scalar.
    Direct { v: usize, s: usize },
    /// `v = p - m` with `p, m >= 0`; cost `Σ (p + m)`.
    Split { p: usize, m: usize },
}

#[derive(Debug, Clone)]
pub struct DirectTranscription {
    node_times: Vec<Vec<f64>>,
    nodes: Vec<Vec<NodeVars>>,
    input_dim: usize,
    program: ConicProgram,
}

impl DirectTranscription {
    pub fn new(problem: &TransferProblem) -> Self {
        let grid = ProblemGrid::new(problem);
        Self::on_grid(problem, &grid)
    }

    fn on_grid(problem: &TransferProblem, grid: &ProblemGrid) -> Self {
        let nx = problem.state_dim();
        let nu = problem.input_dim();
        let windows = problem.windows();
        let b = drift(problem).0;

        let mut nodes = Vec::with_capacity(windows.len());
        let mut next = 0;
        for (k, w) in windows.iter().enumerate() {
            let count = grid.window(k).len();
            let list = (0..count)
                .map(|_| {
                    let n = match w.norm {
                        NormKind::L1 => NodeVars::Split { p: next, m: next + nu },
                        NormKind::L2 | NormKind::LInf => NodeVars::Direct { v: next, s: next + nu },
                    };
                    next += match n {
                        NodeVars::Split { .. } => 2 * nu,
                        NodeVars::Direct { .. } => nu + 1,
                    };
                    n
                })
                .collect::<Vec<_>>();
            nodes.push(list);
        }

        let mut program = ConicProgram::new(next, Sense::Minimize);
        let mut eq_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nx];
        for (k, w) in windows.iter().enumerate() {
            let mut cost_terms = Vec::new();
            for (i, node) in nodes[k].iter().enumerate() {
                let g = &grid.window(k).influence[i];
                match *node {
                    NodeVars::Split { p, m } => {
                        for j in 0..nu {
                            program.set_objective(p + j, 1.0);
                            program.set_objective(m + j, 1.0);
                            cost_terms.push((p + j, -1.0));
                            cost_terms.push((m + j, -1.0));
                            program
                                .add_block(ConeKind::Nonnegative, vec![AffineRow::var(p + j), AffineRow::var(m + j)]);
                            for r in 0..nx {
                                if g[(r, j)] != 0.0 {
                                    eq_terms[r].push((p + j, g[(r, j)]));
                                    eq_terms[r].push((m + j, -g[(r, j)]));
                                }
                            }
                        }
                    }
                    NodeVars::Direct { v, s } => {
                        program.set_objective(s, 1.0);
                        cost_terms.push((s, -1.0));
                        for j in 0..nu {
                            for r in 0..nx {
                                if g[(r, j)] != 0.0 {
                                    eq_terms[r].push((v + j, g[(r, j)]));
                                }
                            }
                        }
                        if w.norm == NormKind::L2 {
                            let mut rows = vec![AffineRow::var(s)];
                            rows.extend((0..nu).map(|j| AffineRow::var(v + j)));
                            program.add_block(ConeKind::SecondOrder, rows);
                        } else {
                            let rows = (0..nu)
                                .flat_map(|j| [1.0, -1.0].map(|sg| AffineRow::new(vec![(s, 1.0), (v + j, -sg)], 0.0)))
                                .collect();
                            program.add_block(ConeKind::Nonnegative, rows);
                        }
                    }
                }
            }
            if w.is_capped() {
                program.add_nonnegative(AffineRow::new(cost_terms, w.dv_max));
            }
        }
        for (r, terms) in eq_terms.into_iter().enumerate() {
            program.add_equality(AffineRow::new(terms, -b[r]));
        }

        Self { node_times: grid.windows().iter().map(|w| w.times.clone()).collect(), nodes, input_dim: nu, program }
    }

    /// `n_u · Σ_k M_k`, one impulse vector per node.
    pub fn impulse_variable_count(&self) -> usize {
        self.input_dim * self.node_times.iter().map(Vec::len).sum::<usize>()
    }

    pub fn program(&self) -> &ConicProgram {
        &self.program
    }

    pub fn solve(&self, problem: &TransferProblem, tolerances: &Tolerances) -> Result<ImpulsePlan> {
        let start = Instant::now();
        if drift(problem).is_zero() {
            return Ok(ImpulsePlan::zero(problem));
        }
        let sol = solve_conic(&self.program, tolerances)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "direct transcription on {} nodes has a primal infeasibility certificate",
                    self.node_times.iter().map(Vec::len).sum::<usize>()
                )))
            }
            status => return Err(Error::Solver { status, context: "solving the direct transcription".into() }),
        }
        let nu = self.input_dim;
        let z = &sol.primal;
        let mut raw: Vec<Vec<(f64, Vec<f64>, f64)>> = Vec::with_capacity(self.nodes.len());
        let mut largest: f64 = 0.0;
        for (k, (nodes, times)) in self.nodes.iter().zip(&self.node_times).enumerate() {
            let norm = problem.windows()[k].norm;
            let list = nodes
                .iter()
                .zip(times)
                .map(|(node, &t)| {
                    let v: Vec<f64> = match *node {
                        NodeVars::Split { p, m } => (0..nu).map(|j| z[p + j] - z[m + j]).collect(),
                        NodeVars::Direct { v, .. } => z[v..v + nu].to_vec(),
                    };
                    let mag = norm.eval(&v);
                    largest = largest.max(mag);
                    (t, v, mag)
                })
                .collect();
            raw.push(list);
        }
        let impulses = raw
            .into_iter()
            .map(|list| {
                list.into_iter()
                    .filter(|(_, _, mag)| *mag > 0.0 && *mag >= 1e-9 * largest)
                    .map(|(time, vector, _)| Impulse { time, vector })
                    .collect()
            })
            .collect();
        let mut plan = ImpulsePlan::from_impulses(problem, impulses);
        plan.solve_time = start.elapsed().as_secs_f64();
        Ok(plan)
    }
}

/// Direct-transcription solve with default tolerances.
pub fn solve_direct(problem: &TransferProblem) -> Result<ImpulsePlan> {
    DirectTranscription::new(problem).solve(problem, &Tolerances::default())
}

/// Optimal value of the uncapped dual `max λ'b s.t. f°_k(G(t)'λ) <= 1` with
/// every grid time constrained at once.
pub fn basic_dual_on_grid(problem: &TransferProblem, tolerances: &Tolerances) -> Result<f64> {
    let grid = ProblemGrid::new(problem);
    let nx = problem.state_dim();
    let nu = problem.input_dim();
    let b = drift(problem).0;
    // λ = λ⁺ - λ⁻ keeps the L1-dual rows linear without auxiliaries.
    let mut program = ConicProgram::new(nx, Sense::Maximize);
    for r in 0..nx {
        program.set_objective(r, b[r]);
    }
    for (k, w) in problem.windows().iter().enumerate() {
        for g in &grid.window(k).influence {
            let y = |j: usize, sign: f64| -> Vec<(usize, f64)> { (0..nx).map(|r| (r, sign * g[(r, j)])).collect() };
            match w.norm.dual() {
                NormKind::L2 => {
                    let mut rows = vec![AffineRow::constant(1.0)];
                    rows.extend((0..nu).map(|j| AffineRow::new(y(j, 1.0), 0.0)));
                    program.add_block(ConeKind::SecondOrder, rows);
                }
                NormKind::LInf => {
                    let rows = (0..nu).flat_map(|j| [1.0, -1.0].map(|s| AffineRow::new(y(j, -s), 1.0))).collect();
                    program.add_block(ConeKind::Nonnegative, rows);
                }
                NormKind::L1 => {
                    // Σ |y_j| <= 1 as every sign pattern.
                    let rows = (0..1usize << nu)
                        .map(|mask| {
                            let mut terms = vec![0.0; nx];
                            for j in 0..nu {
                                let s = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
                                for r in 0..nx {
                                    terms[r] -= s * g[(r, j)];
                                }
                            }
                            AffineRow::new(terms.into_iter().enumerate().collect(), 1.0)
                        })
                        .collect();
                    program.add_block(ConeKind::Nonnegative, rows);
                }
            }
        }
    }
    let sol = solve_conic(&program, tolerances)?;
    if sol.status != SolveStatus::Optimal {
        return Err(Error::Solver { status: sol.status, context: "solving the basic dual on the grid".into() });
    }
    Ok(sol.objective_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub sip_outcome: Outcome,
    pub direct_outcome: Outcome,
    /// Reconstructed plan cost, scaled impulse units.
    pub sip_cost: Option<f64>,
    pub direct_cost: Option<f64>,
    pub dual_objective: f64,
    /// `|direct - sip| / max(|direct|, 1e-12)`.
    pub relative_gap: Option<f64>,
    pub sip_variables: usize,
    pub direct_variables: usize,
    pub sip_iterations: usize,
    pub sip_time: f64,
    pub direct_time: f64,
    pub agree: bool,
}

pub const AGREEMENT_TOLERANCE: f64 = 0.01;

/// Runs the SIP pipeline and the direct transcription side by side.
pub fn compare(problem: &TransferProblem, opts: &SipOptions) -> Result<ComparisonReport> {
    let sip_start = Instant::now();
    let mut dual = solve_dual(problem, opts)?;
    let (sip_outcome, sip_cost) = match dual.status {
        DualStatus::Optimal => {
            let plan = reconstruct(problem, &mut dual, opts)?;
            (Outcome::Optimal, Some(plan.total_cost))
        }
        DualStatus::PrimalInfeasible => (Outcome::Infeasible, None),
        DualStatus::IterationLimit => {
            return Err(Error::Inconsistent(format!(
                "SIP hit the iteration limit after {} iterations",
                dual.iterations
            )))
        }
    };
    let sip_time = sip_start.elapsed().as_secs_f64();

    let direct_start = Instant::now();
    let transcription = DirectTranscription::new(problem);
    let direct_variables = transcription.impulse_variable_count();
    let (direct_outcome, direct_cost) = match transcription.solve(problem, &opts.tolerances) {
        Ok(plan) => (Outcome::Optimal, Some(plan.total_cost)),
        Err(Error::Infeasible(_)) => (Outcome::Infeasible, None),
        Err(e) => return Err(e),
    };
    let direct_time = direct_start.elapsed().as_secs_f64();

    let relative_gap = match (sip_cost, direct_cost) {
        (Some(s), Some(d)) => Some((d - s).abs() / d.abs().max(1e-12)),
        _ => None,
    };
    let agree = match relative_gap {
        Some(gap) => {
            gap <= AGREEMENT_TOLERANCE || (sip_cost.unwrap().abs() < 1e-12 && direct_cost.unwrap().abs() < 1e-12)
        }
        None => sip_outcome == direct_outcome,
    };
    Ok(ComparisonReport {
        sip_outcome,
        direct_outcome,
        sip_cost,
        direct_cost,
        dual_objective: dual.objective,
        relative_gap,
        sip_variables: dual.subproblem_variables,
        direct_variables,
        sip_iterations: dual.iterations,
        sip_time,
        direct_time,
        agree,
    })
}

/// Options for [`random_instance`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RandomInstanceOptions {
    /// Force every window uncapped.
    pub unconstrained: bool,
    /// Force a single full-horizon window.
    pub single_window: bool,
}

/// Seeded double-integrator instance over `[0, 10]`.
///
/// Caps are drawn around the uncapped grid optimum `P0`: the total budget is
/// `ρ P0` with `ρ` in `[0.6, 0.97] ∪ [1.03, 1.8]`, split across windows with
/// random weights, and occasionally a window is left uncapped. Roughly a
/// third of the capped instances are infeasible.
pub fn random_instance(seed: u64, options: RandomInstanceOptions) -> Result<TransferProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = rng.gen_range(1..=2);
    let profile = if rng.gen_bool(0.5) {
        InputProfile::Constant
    } else {
        InputProfile::Sinusoidal { amplitude: rng.gen_range(0.2..0.6), frequency: rng.gen_range(0.3..1.5) }
    };
    let system: Arc<dyn LtvSystem> = Arc::new(DoubleIntegrator::new(axes, profile)?);
    let nx = 2 * axes;
    let tf = 10.0;

    let count = if options.single_window { 1 } else { rng.gen_range(1..=3) };
    let segment = tf / count as f64;
    let norms = [NormKind::L1, NormKind::L2, NormKind::LInf];
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let start = k as f64 * segment;
        let buffer = if count == 1 { 0.0 } else { rng.gen_range(0.05..0.3) * segment };
        let norm = norms[rng.gen_range(0..3)];
        let grid = rng.gen_range(41..=81);
        windows.push(ControlWindow::new(start, start + segment - buffer, norm, f64::INFINITY, grid)?);
    }

    let mut b: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
    while b.iter().map(|v| v * v).sum::<f64>() < 1e-2 {
        b = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
    }
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    b.iter_mut().for_each(|v| *v /= scale);

    let problem =
        TransferProblem::new(system, 0.0, tf, DVector::zeros(nx), DVector::from_column_slice(&b), windows.clone())?;
    if options.unconstrained {
        return Ok(problem);
    }

    let base = solve_direct(&problem)?.total_cost;
    let rho = loop {
        let r: f64 = rng.gen_range(0.6..1.8);
        if !(0.97..=1.03).contains(&r) {
            break r;
        }
    };
    let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    for (w, weight) in windows.iter_mut().zip(&weights) {
        w.dv_max = rho * base * weight / total;
    }
    if count > 1 && rng.gen_bool(0.2) {
        let k = rng.gen_range(0..count);
        windows[k].dv_max = f64::INFINITY;
    }
    problem.with_windows(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn di(x0: [f64; 2], xf: [f64; 2], windows: Vec<ControlWindow>) -> TransferProblem {
        let sys: Arc<dyn LtvSystem> = Arc::new(DoubleIntegrator::new(1, InputProfile::Constant).unwrap());
        TransferProblem::new(sys, 0.0, 10.0, DVector::from_column_slice(&x0), DVector::from_column_slice(&xf), windows)
            .unwrap()
    }

    #[test]
    fn direct_zero_drift() {
        let w = ControlWindow::new(0.0, 10.0, NormKind::L2, 1.0, 11).unwrap();
        let p = di([2.0, 0.0], [2.0, 0.0], vec![w]);
        assert_eq!(solve_direct(&p).unwrap().total_cost, 0.0);
    }

    #[test]
    fn direct_rest_to_rest_all_norms() {
        for norm in [NormKind::L1, NormKind::L2, NormKind::LInf] {
            let w = ControlWindow::new(0.0, 10.0, norm, f64::INFINITY, 21).unwrap();
            let p = di([0.0, 0.0], [1.0, 0.0], vec![w]);
            let plan = solve_direct(&p).unwrap();
            assert!((plan.total_cost - 0.2).abs() < 1e-7, "{norm}: {}", plan.total_cost);
            assert!(plan.boundary_residual.norm() < 1e-7);
        }
    }

    #[test]
    fn direct_reports_infeasible() {
        let w = ControlWindow::new(0.0, 10.0, NormKind::L1, 0.1, 21).unwrap();
        let p = di([0.0, 0.0], [1.0, 0.0], vec![w]);
        assert!(matches!(solve_direct(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn impulse_variable_accounting() {
        let w1 = ControlWindow::new(0.0, 4.0, NormKind::L1, 1.0, 30).unwrap();
        let w2 = ControlWindow::new(5.0, 10.0, NormKind::L2, 1.0, 20).unwrap();
        let p = di([0.0, 0.0], [1.0, 0.0], vec![w1, w2]);
        assert_eq!(DirectTranscription::new(&p).impulse_variable_count(), 50);
    }

    #[test]
    fn basic_dual_rest_to_rest() {
        let w = ControlWindow::new(0.0, 10.0, NormKind::LInf, f64::INFINITY, 21).unwrap();
        let p = di([0.0, 0.0], [1.0, 0.0], vec![w]);
        let d = basic_dual_on_grid(&p, &Tolerances::default()).unwrap();
        assert!((d - 0.2).abs() < 1e-7);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let a = random_instance(11, RandomInstanceOptions::default()).unwrap();
        let b = random_instance(11, RandomInstanceOptions::default()).unwrap();
        assert_eq!(a.windows(), b.windows());
        assert_eq!(a.xf(), b.xf());
    }

    #[test]
    fn compare_zero_drift() {
        let w = ControlWindow::new(0.0, 10.0, NormKind::L2, 1.0, 11).unwrap();
        let p = di([2.0, 0.0], [2.0, 0.0], vec![w]);
        let r = compare(&p, &SipOptions::default()).unwrap();
        assert_eq!(r.sip_cost, Some(0.0));
        assert_eq!(r.direct_cost, Some(0.0));
        assert!(r.agree);
    }
}
