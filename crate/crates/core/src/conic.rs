//! Canonical finite conic program and the solver contract used by the dual
//! subproblem, the discrete reconstruction and the direct-transcription
//! oracle.
//!
//! Programs are stated as
//!
//! ```text
//! minimize / maximize  c'z
//! subject to           E z = h
//!                      F_i z + g_i ∈ K_i      (K_i nonnegative orthant or second-order cone)
//! ```
//!
//! and solved with the Clarabel interior-point method.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    /// Every row of the block is `>= 0`.
    Nonnegative,
    /// First row bounds the Euclidean norm of the remaining rows.
    SecondOrder,
}

/// One affine row `Σ coef · z[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineRow {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineRow {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms, constant }
    }

    pub fn constant(constant: f64) -> Self {
        Self { terms: Vec::new(), constant }
    }

    pub fn var(var: usize) -> Self {
        Self { terms: vec![(var, 1.0)], constant: 0.0 }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * z[j]).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<AffineRow>,
}

impl ConeBlock {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    num_vars: usize,
    sense: Sense,
    objective: Vec<f64>,
    equalities: Vec<AffineRow>,
    blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        Self { num_vars, sense, objective: vec![0.0; num_vars], equalities: Vec::new(), blocks: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn equalities(&self) -> &[AffineRow] {
        &self.equalities
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    /// Adds `row = 0`; the row constant carries `-h`.
    pub fn add_equality(&mut self, row: AffineRow) -> usize {
        self.equalities.push(row);
        self.equalities.len() - 1
    }

    pub fn add_block(&mut self, kind: ConeKind, rows: Vec<AffineRow>) -> usize {
        self.blocks.push(ConeBlock { kind, rows });
        self.blocks.len() - 1
    }

    pub fn add_nonnegative(&mut self, row: AffineRow) -> usize {
        self.add_block(ConeKind::Nonnegative, vec![row])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_vars == 0 {
            return Err(Error::MalformedProgram("program has no variables".into()));
        }
        if self.objective.len() != self.num_vars {
            return Err(Error::MalformedProgram("objective length differs from variable count".into()));
        }
        let check_row = |row: &AffineRow, what: &str| -> Result<()> {
            for &(j, c) in &row.terms {
                if j >= self.num_vars {
                    return Err(Error::MalformedProgram(format!(
                        "{what} references variable {j} of {}",
                        self.num_vars
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::MalformedProgram(format!("{what} has non-finite coefficient")));
                }
            }
            if !row.constant.is_finite() {
                return Err(Error::MalformedProgram(format!("{what} has non-finite constant")));
            }
            Ok(())
        };
        for (i, row) in self.equalities.iter().enumerate() {
            check_row(row, &format!("equality {i}"))?;
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if block.rows.is_empty() {
                return Err(Error::MalformedProgram(format!("cone block {i} is empty")));
            }
            for row in &block.rows {
                check_row(row, &format!("cone block {i}"))?;
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedProgram("objective has non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// Independent feasibility measurement of a candidate point.
    pub fn check_point(&self, z: &[f64]) -> FeasibilityReport {
        let equality_residual = self.equalities.iter().map(|r| r.eval(z).abs()).fold(0.0, f64::max);
        let mut cone_violation: f64 = 0.0;
        for block in &self.blocks {
            let vals: Vec<f64> = block.rows.iter().map(|r| r.eval(z)).collect();
            let v = match block.kind {
                ConeKind::Nonnegative => vals.iter().fold(0.0_f64, |m, v| m.max(-v)),
                ConeKind::SecondOrder => {
                    let tail = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (tail - vals[0]).max(0.0)
                }
            };
            cone_violation = cone_violation.max(v);
        }
        let mut scale: f64 = 1.0;
        for row in self.equalities.iter().chain(self.blocks.iter().flat_map(|b| b.rows.iter())) {
            scale = scale.max(row.constant.abs());
        }
        scale = z.iter().fold(scale, |m, v| m.max(v.abs()));
        FeasibilityReport { equality_residual, cone_violation, scale }
    }

    fn row_count(&self) -> usize {
        self.equalities.len() + self.blocks.iter().map(|b| b.rows.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub equality_residual: f64,
    pub cone_violation: f64,
    /// `1 + max(|constants|, |z|)`, the reference for relative checks.
    pub scale: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.equality_residual <= tol * self.scale && self.cone_violation <= tol * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas_tol: 1e-10, gap_tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// `c'z` in the program's own sense.
    pub objective_value: f64,
    /// Multipliers of the equality rows.
    pub equality_duals: Vec<f64>,
    /// Multipliers of each cone block, in block order.
    pub block_duals: Vec<Vec<f64>>,
    pub iterations: u32,
    pub solve_time: f64,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub fn solve_conic(program: &ConicProgram, tolerances: &Tolerances) -> Result<ConicSolution> {
    program.validate()?;
    let start = Instant::now();
    let n = program.num_vars;
    let m = program.row_count();

    let mut ri = Vec::new();
    let mut ci = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::with_capacity(m);
    let mut cones = Vec::new();

    // Clarabel form: A z + s = b with s in K.
    let mut row = 0;
    for eq in &program.equalities {
        for &(j, c) in &eq.terms {
            ri.push(row);
            ci.push(j);
            vals.push(c);
        }
        b.push(-eq.constant);
        row += 1;
    }
    if !program.equalities.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
    }
    for block in &program.blocks {
        for r in &block.rows {
            for &(j, c) in &r.terms {
                ri.push(row);
                ci.push(j);
                vals.push(-c);
            }
            b.push(r.constant);
            row += 1;
        }
        let cone = match block.kind {
            ConeKind::Nonnegative => SupportedConeT::NonnegativeConeT(block.dim()),
            ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(block.dim()),
        };
        // Merge runs of nonnegative blocks into a single orthant.
        match (cones.last_mut(), &cone) {
            (Some(SupportedConeT::NonnegativeConeT(d)), SupportedConeT::NonnegativeConeT(k)) => *d += *k,
            _ => cones.push(cone),
        }
    }

    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
    let p = CscMatrix::zeros((n, n));
    let q: Vec<f64> = match program.sense {
        Sense::Minimize => program.objective.clone(),
        Sense::Maximize => program.objective.iter().map(|c| -c).collect(),
    };

    let mut sol = run_clarabel(program, &p, &q, &a, &b, &cones, tolerances)?;
    if sol.0 == SolveStatus::NumericalError {
        // One retry at relaxed tolerances.
        let relaxed = Tolerances {
            feas_tol: tolerances.feas_tol * RETRY_RELAXATION,
            gap_tol: tolerances.gap_tol * RETRY_RELAXATION,
            ..*tolerances
        };
        sol = run_clarabel(program, &p, &q, &a, &b, &cones, &relaxed)?;
    }
    let (status, sol) = sol;
    let primal = sol.x.clone();

    let neq = program.equalities.len();
    let equality_duals = sol.z[..neq].to_vec();
    let mut block_duals = Vec::with_capacity(program.blocks.len());
    let mut offset = neq;
    for block in &program.blocks {
        block_duals.push(sol.z[offset..offset + block.dim()].to_vec());
        offset += block.dim();
    }

    Ok(ConicSolution {
        status,
        objective_value: program.objective_value(&primal),
        primal,
        equality_duals,
        block_duals,
        iterations: sol.iterations,
        solve_time: start.elapsed().as_secs_f64(),
    })
}

/// Tolerance multiplier for the single retry after a numerical failure.
pub const RETRY_RELAXATION: f64 = 100.0;

type ClarabelSolution = clarabel::solver::DefaultSolution<f64>;

#[allow(clippy::too_many_arguments)]
fn run_clarabel(
    program: &ConicProgram,
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    tolerances: &Tolerances,
) -> Result<(SolveStatus, ClarabelSolution)> {
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(tolerances.max_iter)
        .tol_feas(tolerances.feas_tol)
        .tol_gap_abs(tolerances.gap_tol)
        .tol_gap_rel(tolerances.gap_tol)
        .max_threads(1)
        .build()
        .map_err(|e| Error::MalformedProgram(format!("solver settings: {e}")))?;

    let mut solver =
        DefaultSolver::new(p, q, a, b, cones, settings).map_err(|e| Error::MalformedProgram(format!("{e}")))?;
    solver.solve();
    let sol = solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => {
            if program.check_point(&sol.x).is_feasible(10.0 * tolerances.feas_tol) {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalError
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
        _ => SolveStatus::NumericalError,
    };
    Ok((status, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimize_with_lower_bound() {
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.set_objective(0, 1.0);
        p.add_nonnegative(AffineRow::new(vec![(0, 1.0)], -3.0));
        let s = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.primal[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn support_function_of_unit_ball() {
        let bvec = [1.0, -2.0, 2.0];
        let mut p = ConicProgram::new(3, Sense::Maximize);
        for (i, v) in bvec.iter().enumerate() {
            p.set_objective(i, *v);
        }
        let mut rows = vec![AffineRow::constant(1.0)];
        rows.extend((0..3).map(AffineRow::var));
        p.add_block(ConeKind::SecondOrder, rows);
        let s = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn equality_constrained_lp() {
        // min x + 2y s.t. x + y = 1, x,y >= 0
        let mut p = ConicProgram::new(2, Sense::Minimize);
        p.set_objective(0, 1.0);
        p.set_objective(1, 2.0);
        p.add_equality(AffineRow::new(vec![(0, 1.0), (1, 1.0)], -1.0));
        p.add_nonnegative(AffineRow::var(0));
        p.add_nonnegative(AffineRow::var(1));
        let s = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-7);
        assert!(p.check_point(&s.primal).is_feasible(1e-8));
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.set_objective(0, 1.0);
        p.add_nonnegative(AffineRow::new(vec![(0, 1.0)], -3.0));
        p.add_nonnegative(AffineRow::new(vec![(0, -1.0)], 1.0));
        let s = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut p = ConicProgram::new(1, Sense::Maximize);
        p.set_objective(0, 1.0);
        p.add_nonnegative(AffineRow::var(0));
        let s = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn iteration_limit_is_not_optimal() {
        let mut p = ConicProgram::new(3, Sense::Maximize);
        for i in 0..3 {
            p.set_objective(i, 1.0 + i as f64);
        }
        let mut rows = vec![AffineRow::constant(1.0)];
        rows.extend((0..3).map(AffineRow::var));
        p.add_block(ConeKind::SecondOrder, rows);
        let tol = Tolerances { max_iter: 1, ..Tolerances::default() };
        let s = solve_conic(&p, &tol).unwrap();
        assert_eq!(s.status, SolveStatus::MaxIter);
    }

    #[test]
    fn malformed_programs_are_rejected() {
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.add_nonnegative(AffineRow::var(4));
        assert!(matches!(solve_conic(&p, &Tolerances::default()), Err(Error::MalformedProgram(_))));
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.add_block(ConeKind::SecondOrder, vec![]);
        assert!(matches!(solve_conic(&p, &Tolerances::default()), Err(Error::MalformedProgram(_))));
        let p = ConicProgram::new(0, Sense::Minimize);
        assert!(p.validate().is_err());
    }

    #[test]
    fn repeated_solves_are_deterministic() {
        let mut p = ConicProgram::new(2, Sense::Maximize);
        p.set_objective(0, 0.3);
        p.set_objective(1, -1.1);
        p.add_block(ConeKind::SecondOrder, vec![AffineRow::constant(2.0), AffineRow::var(0), AffineRow::var(1)]);
        p.add_nonnegative(AffineRow::new(vec![(1, -1.0)], 0.5));
        let a = solve_conic(&p, &Tolerances::default()).unwrap();
        let b = solve_conic(&p, &Tolerances::default()).unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.objective_value - b.objective_value).abs() < 1e-9);
    }
}
