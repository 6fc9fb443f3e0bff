//! Iterative-discretization solution of the magnitude-constrained dual
//! semi-infinite program
//!
//! ```text
//! maximize    λ'b - Σ_k ΔV_max,k σ_k
//! subject to  f°_k(G(t)'λ) <= 1 + σ_k   for all t in T_k, all k
//!             σ >= 0
//! ```
//!
//! Each outer iteration solves the program on a finite sample set (with the
//! guard `||λ||₂ <= λ_max`), scans every window grid for the time of largest
//! dual norm and appends it. The loop stops once every window's violation is
//! within `ε`; a guard left active at that point means the primal is
//! infeasible.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, AffineRow, ConeKind, ConicProgram, Sense, SolveStatus, Tolerances};
use crate::error::{Error, Result};
use crate::grid::ProblemGrid;
use crate::norm::NormKind;
use crate::problem::{drift, influence_unchecked, TransferProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SipOptions {
    /// Absolute bound on `f°_k - σ_k - 1` accepted at exit.
    pub epsilon: f64,
    /// Radius of the `||λ_f||₂` guard.
    pub lambda_max: f64,
    pub max_outer_iters: usize,
    pub tolerances: Tolerances,
}

impl Default for SipOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, lambda_max: 1e6, max_outer_iters: 100, tolerances: Tolerances::default() }
    }
}

impl SipOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::InvalidProblem(format!("lambda_max must be positive, got {}", self.lambda_max)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidProblem("max_outer_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Finite constraint times, kept sorted and duplicate-free per window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub windows: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl SampleSet {
    pub fn empty(window_count: usize) -> Self {
        Self { windows: vec![Vec::new(); window_count], iteration: 0 }
    }

    /// Window endpoints `∪_k ∂T_k`.
    pub fn endpoints(problem: &TransferProblem) -> Self {
        Self { windows: problem.windows().iter().map(|w| vec![w.start, w.end]).collect(), iteration: 1 }
    }

    /// Inserts `t` into window `k`; returns false if it was already present.
    pub fn insert(&mut self, k: usize, t: f64) -> bool {
        let list = &mut self.windows[k];
        match list.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(_) => false,
            Err(pos) => {
                list.insert(pos, t);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset_of(&self, other: &SampleSet) -> bool {
        self.windows.len() == other.windows.len()
            && self
                .windows
                .iter()
                .zip(&other.windows)
                .all(|(a, b)| a.iter().all(|t| b.binary_search_by(|x| x.total_cmp(t)).is_ok()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualStatus {
    Optimal,
    PrimalInfeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub lambda_f: DVector<f64>,
    pub sigma: Vec<f64>,
    /// `D(S)` on the final sample set.
    pub objective: f64,
    pub status: DualStatus,
    pub samples: SampleSet,
    /// Largest `f°_k - σ_k - 1` over all grids, one entry per outer iteration.
    pub violation_history: Vec<f64>,
    /// `D(S^(j))`, one entry per outer iteration.
    pub objective_history: Vec<f64>,
    /// Per-window impulse times; empty until reconstruction fills them.
    pub active_times: Vec<Vec<f64>>,
    /// Variable count of the last finite subproblem.
    pub subproblem_variables: usize,
    pub iterations: usize,
    /// Wall-clock seconds spent in the outer loop.
    pub solve_time: f64,
}

impl DualSolution {
    pub fn lambda_norm(&self) -> f64 {
        self.lambda_f.norm()
    }
}

/// Builds the finite dual on `samples`.
///
/// Variables are laid out as `[λ_f (n_x), σ (N), aux...]`; auxiliary
/// variables only appear for windows costed in the L∞ norm, whose dual L1
/// constraint is written as a sum of bounded absolute values.
pub fn build_finite_dual(problem: &TransferProblem, samples: &SampleSet, opts: &SipOptions) -> ConicProgram {
    let nx = problem.state_dim();
    let nu = problem.input_dim();
    let windows = problem.windows();
    let n_win = windows.len();
    let b = drift(problem).0;

    let aux_count: usize =
        windows.iter().zip(&samples.windows).filter(|(w, _)| w.norm == NormKind::LInf).map(|(_, s)| s.len() * nu).sum();
    let mut program = ConicProgram::new(nx + n_win + aux_count, Sense::Maximize);
    let sigma = |k: usize| nx + k;

    for (r, v) in b.iter().enumerate() {
        program.set_objective(r, *v);
    }
    for (k, w) in windows.iter().enumerate() {
        if w.is_capped() {
            program.set_objective(sigma(k), -w.dv_max);
            program.add_nonnegative(AffineRow::var(sigma(k)));
        } else {
            program.add_equality(AffineRow::var(sigma(k)));
        }
    }

    let mut guard = vec![AffineRow::constant(opts.lambda_max)];
    guard.extend((0..nx).map(AffineRow::var));
    program.add_block(ConeKind::SecondOrder, guard);

    let mut next_aux = nx + n_win;
    for (k, (w, times)) in windows.iter().zip(&samples.windows).enumerate() {
        for &t in times {
            let g = influence_unchecked(problem, t);
            // y_i = Σ_r G[r, i] λ_r
            let primer_row = |i: usize, sign: f64| -> Vec<(usize, f64)> {
                (0..nx).filter(|&r| g[(r, i)] != 0.0).map(|r| (r, sign * g[(r, i)])).collect()
            };
            let threshold = AffineRow::new(vec![(sigma(k), 1.0)], 1.0);
            match w.norm {
                NormKind::L2 => {
                    let mut rows = vec![threshold];
                    rows.extend((0..nu).map(|i| AffineRow::new(primer_row(i, 1.0), 0.0)));
                    program.add_block(ConeKind::SecondOrder, rows);
                }
                NormKind::L1 => {
                    let mut rows = Vec::with_capacity(2 * nu);
                    for i in 0..nu {
                        for sign in [1.0, -1.0] {
                            let mut terms = primer_row(i, -sign);
                            terms.push((sigma(k), 1.0));
                            rows.push(AffineRow::new(terms, 1.0));
                        }
                    }
                    program.add_block(ConeKind::Nonnegative, rows);
                }
                NormKind::LInf => {
                    let aux: Vec<usize> = (next_aux..next_aux + nu).collect();
                    next_aux += nu;
                    let mut rows = Vec::with_capacity(2 * nu + 1);
                    for (i, &a) in aux.iter().enumerate() {
                        for sign in [1.0, -1.0] {
                            let mut terms = primer_row(i, -sign);
                            terms.push((a, 1.0));
                            rows.push(AffineRow::new(terms, 0.0));
                        }
                    }
                    let mut total: Vec<(usize, f64)> = aux.iter().map(|&a| (a, -1.0)).collect();
                    total.push((sigma(k), 1.0));
                    rows.push(AffineRow::new(total, 1.0));
                    program.add_block(ConeKind::Nonnegative, rows);
                }
            }
        }
    }
    program
}

/// Worst grid point of one window for a given dual iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowViolation {
    pub window: usize,
    pub index: usize,
    pub time: f64,
    /// `f°_k(G(t)'λ_f)` at the maximizer.
    pub dual_norm: f64,
    /// `f°_k - σ_k - 1` at the maximizer.
    pub violation: f64,
}

/// Per-window maximizer of the dual norm over each window's grid.
/// Ties go to the earliest time.
pub fn max_violation_times(
    problem: &TransferProblem,
    lambda_f: &DVector<f64>,
    sigma: &[f64],
) -> Result<Vec<WindowViolation>> {
    check_dual_dims(problem, lambda_f, sigma)?;
    let grid = ProblemGrid::new(problem);
    Ok(max_violation_on_grid(problem, &grid, lambda_f, sigma))
}

fn check_dual_dims(problem: &TransferProblem, lambda_f: &DVector<f64>, sigma: &[f64]) -> Result<()> {
    if lambda_f.len() != problem.state_dim() || sigma.len() != problem.windows().len() {
        return Err(Error::Dimension(format!(
            "dual iterate has |λ| = {} and |σ| = {}, expected {} and {}",
            lambda_f.len(),
            sigma.len(),
            problem.state_dim(),
            problem.windows().len()
        )));
    }
    Ok(())
}

pub(crate) fn max_violation_on_grid(
    problem: &TransferProblem,
    grid: &ProblemGrid,
    lambda_f: &DVector<f64>,
    sigma: &[f64],
) -> Vec<WindowViolation> {
    problem
        .windows()
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let wg = grid.window(k);
            let mut best = WindowViolation {
                window: k,
                index: 0,
                time: wg.times[0],
                dual_norm: f64::NEG_INFINITY,
                violation: f64::NEG_INFINITY,
            };
            for (i, g) in wg.influence.iter().enumerate() {
                let y = g.tr_mul(lambda_f);
                let value = w.norm.eval_dual(y.as_slice());
                if value > best.dual_norm {
                    best.index = i;
                    best.time = wg.times[i];
                    best.dual_norm = value;
                }
            }
            best.violation = best.dual_norm - sigma[k] - 1.0;
            best
        })
        .collect()
}

fn split_solution(problem: &TransferProblem, primal: &[f64]) -> (DVector<f64>, Vec<f64>) {
    let nx = problem.state_dim();
    let n_win = problem.windows().len();
    let lambda = DVector::from_column_slice(&primal[..nx]);
    let sigma = primal[nx..nx + n_win]
        .iter()
        .zip(problem.windows())
        .map(|(s, w)| if w.is_capped() { s.max(0.0) } else { 0.0 })
        .collect();
    (lambda, sigma)
}

/// Solves the dual semi-infinite program by iterative discretization.
pub fn solve_dual(problem: &TransferProblem, opts: &SipOptions) -> Result<DualSolution> {
    opts.validate()?;
    let start = Instant::now();
    let grid = ProblemGrid::new(problem);
    let b = drift(problem).0;
    let mut samples = SampleSet::endpoints(problem);
    let mut violation_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut converged = false;
    let mut last = None;

    for iteration in 1..=opts.max_outer_iters {
        samples.iteration = iteration;
        let program = build_finite_dual(problem, &samples, opts);
        let sol = solve_conic(&program, &opts.tolerances)?;
        if sol.status != SolveStatus::Optimal {
            return Err(Error::Solver {
                status: sol.status,
                context: format!(
                    "solving the finite dual at outer iteration {iteration} with {} samples",
                    samples.len()
                ),
            });
        }
        let (lambda, sigma) = split_solution(problem, &sol.primal);
        let objective = lambda.dot(&b)
            - problem
                .windows()
                .iter()
                .zip(&sigma)
                .filter(|(w, _)| w.is_capped())
                .map(|(w, s)| w.dv_max * s)
                .sum::<f64>();
        let scan = max_violation_on_grid(problem, &grid, &lambda, &sigma);
        let worst = scan.iter().map(|v| v.violation).fold(f64::NEG_INFINITY, f64::max);
        violation_history.push(worst);
        objective_history.push(objective);
        last = Some((lambda, sigma, objective, program.num_vars()));

        if worst <= opts.epsilon {
            converged = true;
            break;
        }
        let mut added = 0;
        for v in scan.iter().filter(|v| v.violation > 0.0) {
            if samples.insert(v.window, v.time) {
                added += 1;
            }
        }
        if added == 0 {
            // Every maximizer is already sampled: the remaining violation is
            // the inner solver's own feasibility error, refinement cannot
            // reduce it further.
            converged = true;
            break;
        }
    }

    let (lambda_f, sigma, objective, subproblem_variables) = last.expect("at least one outer iteration always runs");
    let status = if !converged {
        DualStatus::IterationLimit
    } else if lambda_f.norm() >= opts.lambda_max * (1.0 - 1e-6) {
        DualStatus::PrimalInfeasible
    } else {
        DualStatus::Optimal
    };
    let iterations = objective_history.len();
    Ok(DualSolution {
        lambda_f,
        sigma,
        objective,
        status,
        samples,
        violation_history,
        objective_history,
        active_times: vec![Vec::new(); problem.windows().len()],
        subproblem_variables,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ControlWindow;
    use crate::system::{DoubleIntegrator, InputProfile, LtvSystem};
    use std::sync::Arc;

    fn di(x0: [f64; 2], xf: [f64; 2], windows: Vec<ControlWindow>) -> TransferProblem {
        let sys: Arc<dyn LtvSystem> = Arc::new(DoubleIntegrator::new(1, InputProfile::Constant).unwrap());
        TransferProblem::new(sys, 0.0, 10.0, DVector::from_column_slice(&x0), DVector::from_column_slice(&xf), windows)
            .unwrap()
    }

    fn full_window(norm: NormKind, cap: f64, m: usize) -> ControlWindow {
        ControlWindow::new(0.0, 10.0, norm, cap, m).unwrap()
    }

    #[test]
    fn sample_set_dedups_and_sorts() {
        let mut s = SampleSet::empty(2);
        assert!(s.insert(0, 3.0));
        assert!(s.insert(0, 1.0));
        assert!(!s.insert(0, 3.0));
        assert_eq!(s.windows[0], vec![1.0, 3.0]);
        assert_eq!(s.len(), 2);
        let mut t = s.clone();
        t.insert(1, 0.5);
        assert!(s.is_subset_of(&t));
        assert!(!t.is_subset_of(&s));
    }

    #[test]
    fn finite_dual_variable_count() {
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L2, 1.0, 5)]);
        let prog = build_finite_dual(&p, &SampleSet::endpoints(&p), &SipOptions::default());
        assert_eq!(prog.num_vars(), 2 + 1);
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::LInf, 1.0, 5)]);
        let prog = build_finite_dual(&p, &SampleSet::endpoints(&p), &SipOptions::default());
        assert_eq!(prog.num_vars(), 2 + 1 + 2);
    }

    #[test]
    fn empty_sample_set_pushes_lambda_to_guard() {
        let p = di([0.0, 0.0], [3.0, 4.0], vec![full_window(NormKind::L2, f64::INFINITY, 5)]);
        let opts = SipOptions { lambda_max: 100.0, ..SipOptions::default() };
        let prog = build_finite_dual(&p, &SampleSet::empty(1), &opts);
        let sol = solve_conic(&prog, &opts.tolerances).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let lambda = DVector::from_column_slice(&sol.primal[..2]);
        assert!((lambda.norm() - 100.0).abs() < 1e-6);
        assert!((sol.objective_value - 500.0).abs() < 1e-5);
    }

    #[test]
    fn zero_drift_gives_zero_dual() {
        let p = di([1.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L1, 2.0, 11)]);
        let d = solve_dual(&p, &SipOptions::default()).unwrap();
        assert_eq!(d.status, DualStatus::Optimal);
        assert!(d.objective.abs() < 1e-8);
        assert!(d.lambda_f.norm() < 1e-6);
        assert!(d.sigma.iter().all(|s| s.abs() < 1e-6));
    }

    #[test]
    fn lambda_zero_violation_profile() {
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L2, 1.0, 7)]);
        let v = max_violation_times(&p, &DVector::zeros(2), &[0.25]).unwrap();
        assert_eq!(v[0].index, 0);
        assert_eq!(v[0].time, 0.0);
        assert!((v[0].violation + 1.25).abs() < 1e-15);
    }

    #[test]
    fn scan_rejects_wrong_dimensions() {
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L2, 1.0, 7)]);
        assert!(max_violation_times(&p, &DVector::zeros(3), &[0.0]).is_err());
        assert!(max_violation_times(&p, &DVector::zeros(2), &[]).is_err());
    }

    /// Rest-to-rest unit displacement over ten seconds: the optimum is a
    /// 0.1 burn at each end, cost 0.2 with λ = [0.2, -1].
    #[test]
    fn double_integrator_rest_to_rest() {
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L2, f64::INFINITY, 101)]);
        let d = solve_dual(&p, &SipOptions::default()).unwrap();
        assert_eq!(d.status, DualStatus::Optimal);
        assert!((d.objective - 0.2).abs() < 1e-6, "D = {}", d.objective);
        assert!((d.lambda_f[0] - 0.2).abs() < 1e-5 && (d.lambda_f[1] + 1.0).abs() < 1e-5);
        assert_eq!(d.sigma, vec![0.0]);
    }

    #[test]
    fn infeasible_cap_hits_guard() {
        // Moving one unit needs ΔV >= 0.2 (the rest-to-rest optimum); cap 0.1.
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L1, 0.1, 51)]);
        let opts = SipOptions { lambda_max: 1e4, ..SipOptions::default() };
        let d = solve_dual(&p, &opts).unwrap();
        assert_eq!(d.status, DualStatus::PrimalInfeasible);
        assert!((d.lambda_norm() - 1e4).abs() <= 1e-6 * 1e4);
    }

    #[test]
    fn iteration_limit_reported() {
        // Oscillating gain puts the dual-norm maximizers inside the window.
        let profile = InputProfile::Sinusoidal { amplitude: 0.5, frequency: 1.0 };
        let sys: Arc<dyn LtvSystem> = Arc::new(DoubleIntegrator::new(1, profile).unwrap());
        let w = full_window(NormKind::L2, f64::INFINITY, 1001);
        let p =
            TransferProblem::new(sys, 0.0, 10.0, DVector::zeros(2), DVector::from_column_slice(&[1.0, 0.3]), vec![w])
                .unwrap();
        let opts = SipOptions { max_outer_iters: 1, epsilon: 1e-12, ..SipOptions::default() };
        let d = solve_dual(&p, &opts).unwrap();
        assert_eq!(d.status, DualStatus::IterationLimit);
    }

    #[test]
    fn bad_options_rejected() {
        let p = di([0.0, 0.0], [1.0, 0.0], vec![full_window(NormKind::L2, 1.0, 5)]);
        for opts in [
            SipOptions { epsilon: 0.0, ..SipOptions::default() },
            SipOptions { lambda_max: -1.0, ..SipOptions::default() },
            SipOptions { max_outer_iters: 0, ..SipOptions::default() },
        ] {
            assert!(solve_dual(&p, &opts).is_err());
        }
    }
}
