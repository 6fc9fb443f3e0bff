//! Recovery of the impulsive input from a converged dual solution: active
//! time extraction, the discrete primal on those times, and state
//! propagation through the resulting impulses.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, AffineRow, ConeKind, ConicProgram, Sense, SolveStatus, Tolerances};
use crate::dual_sip::{DualSolution, DualStatus, SipOptions};
use crate::error::{Error, Result};
use crate::grid::ProblemGrid;
use crate::norm::NormKind;
use crate::problem::{drift, influence_unchecked, TransferProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    pub time: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsePlan {
    /// Impulses grouped by window, time-ordered within each window.
    pub impulses: Vec<Vec<Impulse>>,
    /// `Σ_k Σ_j f_k(v_kj)`.
    pub total_cost: f64,
    pub window_costs: Vec<f64>,
    /// `Φ(tf, t0) x0 + Σ G(t_kj) v_kj - xf`.
    pub boundary_residual: DVector<f64>,
    pub saturated: Vec<bool>,
    pub solve_time: f64,
}

impl ImpulsePlan {
    pub fn zero(problem: &TransferProblem) -> Self {
        let n = problem.windows().len();
        Self {
            impulses: vec![Vec::new(); n],
            total_cost: 0.0,
            window_costs: vec![0.0; n],
            boundary_residual: DVector::zeros(problem.state_dim()),
            saturated: vec![false; n],
            solve_time: 0.0,
        }
    }

    pub fn impulse_count(&self) -> usize {
        self.impulses.iter().map(Vec::len).sum()
    }

    /// All impulses as `(window, impulse)` in time order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Impulse)> {
        self.impulses.iter().enumerate().flat_map(|(k, list)| list.iter().map(move |i| (k, i)))
    }

    /// Rebuilds costs, residual and saturation flags from the impulse list.
    pub fn from_impulses(problem: &TransferProblem, impulses: Vec<Vec<Impulse>>) -> Self {
        let mut plan = Self { impulses, ..Self::zero(problem) };
        plan.refresh(problem);
        plan
    }

    pub(crate) fn refresh(&mut self, problem: &TransferProblem) {
        let windows = problem.windows();
        self.window_costs = self
            .impulses
            .iter()
            .zip(windows)
            .map(|(list, w)| list.iter().map(|i| w.norm.eval(&i.vector)).sum())
            .collect();
        self.total_cost = self.window_costs.iter().sum();
        self.saturated = self
            .window_costs
            .iter()
            .zip(windows)
            .map(|(c, w)| w.is_capped() && w.dv_max > 0.0 && *c >= w.dv_max * (1.0 - 1e-6))
            .collect();
        self.boundary_residual = boundary_residual(problem, &self.impulses);
    }
}

pub fn boundary_residual(problem: &TransferProblem, impulses: &[Vec<Impulse>]) -> DVector<f64> {
    let sys = problem.system();
    let mut x = sys.stm(problem.t0(), problem.tf()) * problem.x0();
    for imp in impulses.iter().flatten() {
        x += influence_unchecked(problem, imp.time) * DVector::from_column_slice(&imp.vector);
    }
    x - problem.xf()
}

/// Relative gap `|P_d - D(S)| / max(1, |D(S)|)`.
pub fn strong_duality_gap(dual: &DualSolution, plan: &ImpulsePlan) -> f64 {
    (plan.total_cost - dual.objective).abs() / dual.objective.abs().max(1.0)
}

/// Grid times where `f°_k(G(t)'λ) - (1 + σ_k)` lies within `±eps`, with runs
/// of consecutive active grid points merged into one representative time.
pub fn extract_active_times(problem: &TransferProblem, dual: &DualSolution, eps: f64) -> Result<Vec<Vec<f64>>> {
    let grid = ProblemGrid::new(problem);
    extract_on_grid(problem, &grid, dual, eps, true)
}

/// With `cluster = false` every active grid time is kept.
fn extract_on_grid(
    problem: &TransferProblem,
    grid: &ProblemGrid,
    dual: &DualSolution,
    eps: f64,
    cluster: bool,
) -> Result<Vec<Vec<f64>>> {
    if dual.status != DualStatus::Optimal {
        return Err(Error::Inconsistent(format!("dual status is {:?}, not optimal", dual.status)));
    }
    let n_win = problem.windows().len();
    if drift(problem).is_zero() {
        return Ok(vec![Vec::new(); n_win]);
    }
    let mut out = Vec::with_capacity(n_win);
    for (k, w) in problem.windows().iter().enumerate() {
        let wg = grid.window(k);
        let threshold = 1.0 + dual.sigma[k];
        let mut times = Vec::new();
        let mut run: Vec<(usize, f64)> = Vec::new();
        for i in 0..=wg.len() {
            let active = if i < wg.len() {
                let value = w.norm.eval_dual(grid.primer(k, i, &dual.lambda_f).as_slice());
                let gap = (value - threshold).abs();
                (gap <= eps).then_some(gap)
            } else {
                None
            };
            match active {
                Some(gap) => run.push((i, gap)),
                None if !run.is_empty() => {
                    if cluster {
                        times.push(cluster_representative(&wg.times, &run, eps));
                    } else {
                        times.extend(run.iter().map(|&(i, _)| wg.times[i]));
                    }
                    run.clear();
                }
                None => {}
            }
        }
        out.push(times);
    }
    if out.iter().all(Vec::is_empty) {
        return Err(Error::Inconsistent(format!("no active times within {eps:e} although the drift is nonzero")));
    }
    Ok(out)
}

/// Activity-weighted centroid of a run, snapped to the nearest member.
fn cluster_representative(times: &[f64], run: &[(usize, f64)], eps: f64) -> f64 {
    let weight = |gap: f64| (eps - gap) + 1e-6 * eps;
    let total: f64 = run.iter().map(|&(_, g)| weight(g)).sum();
    let centroid = run.iter().map(|&(i, g)| weight(g) * times[i]).sum::<f64>() / total;
    run.iter()
        .map(|&(i, _)| times[i])
        .min_by(|a, b| (a - centroid).abs().total_cmp(&(b - centroid).abs()))
        .expect("runs are never empty")
}

/// Solves the discrete primal on fixed impulse times:
/// minimize `Σ f_k(v_kj)` subject to hitting the terminal state and the
/// per-window caps.
pub fn solve_discrete_primal(problem: &TransferProblem, active_times: &[Vec<f64>]) -> Result<ImpulsePlan> {
    solve_discrete_primal_with(problem, active_times, &Tolerances::default())
}

pub fn solve_discrete_primal_with(
    problem: &TransferProblem,
    active_times: &[Vec<f64>],
    tolerances: &Tolerances,
) -> Result<ImpulsePlan> {
    let start = Instant::now();
    let windows = problem.windows();
    if active_times.len() != windows.len() {
        return Err(Error::Dimension(format!(
            "{} active-time lists for {} windows",
            active_times.len(),
            windows.len()
        )));
    }
    for (k, (w, times)) in windows.iter().zip(active_times).enumerate() {
        if let Some(t) = times.iter().find(|t| !w.contains(**t)) {
            return Err(Error::InvalidProblem(format!("impulse time {t} lies outside window {k}")));
        }
    }
    let b = drift(problem).0;
    if b.iter().all(|v| *v == 0.0) {
        return Ok(ImpulsePlan::zero(problem));
    }
    if active_times.iter().all(Vec::is_empty) {
        return Err(Error::Reconstruction("no impulse times for a nonzero drift".into()));
    }

    let nx = problem.state_dim();
    let nu = problem.input_dim();
    // Per impulse: v (nu), epigraph s (1), and for L1 the bounds a (nu).
    struct Slot {
        window: usize,
        time: f64,
        v: usize,
        s: usize,
    }
    let mut slots = Vec::new();
    let mut next = 0;
    for (k, times) in active_times.iter().enumerate() {
        for &t in times {
            let extra = if windows[k].norm == NormKind::L1 { nu } else { 0 };
            slots.push(Slot { window: k, time: t, v: next, s: next + nu });
            next += nu + 1 + extra;
        }
    }
    let mut program = ConicProgram::new(next, Sense::Minimize);
    let mut eq_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nx];
    let mut cap_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); windows.len()];

    for slot in &slots {
        let g = influence_unchecked(problem, slot.time);
        for r in 0..nx {
            for i in 0..nu {
                if g[(r, i)] != 0.0 {
                    eq_terms[r].push((slot.v + i, g[(r, i)]));
                }
            }
        }
        program.set_objective(slot.s, 1.0);
        cap_terms[slot.window].push((slot.s, -1.0));
        match windows[slot.window].norm {
            NormKind::L2 => {
                let mut rows = vec![AffineRow::var(slot.s)];
                rows.extend((0..nu).map(|i| AffineRow::var(slot.v + i)));
                program.add_block(ConeKind::SecondOrder, rows);
            }
            NormKind::LInf => {
                let rows = (0..nu)
                    .flat_map(|i| [1.0, -1.0].map(|sign| AffineRow::new(vec![(slot.s, 1.0), (slot.v + i, -sign)], 0.0)))
                    .collect();
                program.add_block(ConeKind::Nonnegative, rows);
            }
            NormKind::L1 => {
                let a = slot.s + 1;
                let mut rows: Vec<AffineRow> = (0..nu)
                    .flat_map(|i| [1.0, -1.0].map(|sign| AffineRow::new(vec![(a + i, 1.0), (slot.v + i, -sign)], 0.0)))
                    .collect();
                let mut sum = vec![(slot.s, 1.0)];
                sum.extend((0..nu).map(|i| (a + i, -1.0)));
                rows.push(AffineRow::new(sum, 0.0));
                program.add_block(ConeKind::Nonnegative, rows);
            }
        }
    }
    for (r, terms) in eq_terms.into_iter().enumerate() {
        program.add_equality(AffineRow::new(terms, -b[r]));
    }
    for (k, terms) in cap_terms.into_iter().enumerate() {
        let w = &windows[k];
        if w.is_capped() && !terms.is_empty() {
            program.add_nonnegative(AffineRow::new(terms, w.dv_max * (1.0 - CAP_MARGIN)));
        }
    }

    let sol = solve_conic(&program, tolerances)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::Reconstruction(format!("discrete primal infeasible on {} impulse times", slots.len())))
        }
        status => {
            return Err(Error::Solver { status, context: "solving the discrete primal".into() });
        }
    }

    let mut impulses: Vec<Vec<Impulse>> = vec![Vec::new(); windows.len()];
    let mut largest: f64 = 0.0;
    let candidates: Vec<(usize, Impulse, f64)> = slots
        .iter()
        .map(|slot| {
            let v = sol.primal[slot.v..slot.v + nu].to_vec();
            let mag = windows[slot.window].norm.eval(&v);
            largest = largest.max(mag);
            (slot.window, Impulse { time: slot.time, vector: v }, mag)
        })
        .collect();
    for (k, imp, mag) in candidates {
        if mag > 0.0 && mag >= 1e-10 * largest {
            impulses[k].push(imp);
        }
    }
    for list in &mut impulses {
        list.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    let mut plan = ImpulsePlan::from_impulses(problem, impulses);
    plan.solve_time = start.elapsed().as_secs_f64();
    Ok(plan)
}

/// Cap rows are tightened by this relative amount so the
/// interior-point feasibility error cannot push a window past its cap.
pub const CAP_MARGIN: f64 = 1e-8;

/// Largest extraction tolerance tried before falling back to the full grid.
pub const MAX_EXTRACTION_EPS: f64 = 1e-3;

/// Extraction tolerances tried in order: `ε`, then repeated doubling while
/// the value stays at or below [`MAX_EXTRACTION_EPS`] (always at least `ε`
/// and `2ε`).
pub fn extraction_ladder(epsilon: f64) -> Vec<f64> {
    let mut ladder = vec![epsilon, 2.0 * epsilon];
    let mut eps = 4.0 * epsilon;
    while eps <= MAX_EXTRACTION_EPS {
        ladder.push(eps);
        eps *= 2.0;
    }
    ladder
}

/// Impulses below this fraction of the largest one are dropped when a plan's
/// support is re-solved.
pub const SUPPORT_FRACTION: f64 = 1e-6;

fn times_of(plan: &ImpulsePlan) -> Vec<Vec<f64>> {
    plan.impulses.iter().map(|l| l.iter().map(|i| i.time).collect()).collect()
}

/// Re-solves on the impulses of `plan` carrying at least
/// [`SUPPORT_FRACTION`] of the largest magnitude. Interior-point solutions on
/// redundant time sets spread mass over many nodes; the reduced problem
/// concentrates it. Keeps `plan` unless the reduced plan is within `bound`
/// of `target`.
fn reduce_support(
    problem: &TransferProblem,
    plan: ImpulsePlan,
    tolerances: &Tolerances,
    target: f64,
    bound: f64,
) -> ImpulsePlan {
    let windows = problem.windows();
    let largest = plan.iter().map(|(k, i)| windows[k].norm.eval(&i.vector)).fold(0.0, f64::max);
    let support: Vec<Vec<f64>> = plan
        .impulses
        .iter()
        .zip(windows)
        .map(|(l, w)| {
            l.iter().filter(|i| w.norm.eval(&i.vector) >= SUPPORT_FRACTION * largest).map(|i| i.time).collect()
        })
        .collect();
    if support.iter().map(Vec::len).sum::<usize>() == plan.impulse_count() {
        return plan;
    }
    match solve_discrete_primal_with(problem, &support, tolerances) {
        Ok(reduced) if (reduced.total_cost - target).abs() <= bound => reduced,
        _ => plan,
    }
}

/// Upper bound on discrete-primal solves spent by [`sparsify`].
pub const SPARSIFY_BUDGET: usize = 400;

/// Greedy support reduction toward a vertex of the discrete primal: while
/// the plan has more than `n_x` plus saturated-window impulses, drop the
/// smallest impulse whose removal keeps the cost within `bound` of `target`.
/// Degenerate duals make every grid time active and the interior-point
/// solution then spreads the cost over all of them.
fn sparsify(
    problem: &TransferProblem,
    mut plan: ImpulsePlan,
    tolerances: &Tolerances,
    target: f64,
    bound: f64,
) -> ImpulsePlan {
    let windows = problem.windows();
    let mut budget = SPARSIFY_BUDGET;
    loop {
        let limit = problem.state_dim() + plan.saturated.iter().filter(|s| **s).count();
        if plan.impulse_count() <= limit || budget == 0 {
            return plan;
        }
        let mut order: Vec<(usize, usize, f64)> = plan
            .impulses
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.iter().enumerate().map(move |(j, i)| (k, j, windows[k].norm.eval(&i.vector))))
            .collect();
        order.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut reduced = None;
        for (k, j, _) in order {
            if budget == 0 {
                break;
            }
            budget -= 1;
            let mut times = times_of(&plan);
            times[k].remove(j);
            if let Ok(p) = solve_discrete_primal_with(problem, &times, tolerances) {
                if (p.total_cost - target).abs() <= bound {
                    reduced = Some(p);
                    break;
                }
            }
        }
        match reduced {
            Some(p) => plan = p,
            None => return plan,
        }
    }
}

/// Active-time extraction plus discrete primal, retrying along
/// [`extraction_ladder`] and then on the full grid when the primal comes out
/// infeasible. Fills `dual.active_times` with the times actually used.
///
/// A clustered plan whose cost exceeds `D(S)` by more than `2ε max(1, |D|)`
/// is polished: the primal is re-solved on every active grid time at the
/// same tolerance and then on the support of that solution, and the cheaper
/// plan is kept. Finally [`sparsify`] trims redundant impulses.
pub fn reconstruct(problem: &TransferProblem, dual: &mut DualSolution, opts: &SipOptions) -> Result<ImpulsePlan> {
    if dual.status != DualStatus::Optimal {
        return Err(Error::Inconsistent(format!("cannot reconstruct from a {:?} dual", dual.status)));
    }
    let start = Instant::now();
    let grid = ProblemGrid::new(problem);
    let tol = &opts.tolerances;
    let target = dual.objective;
    let bound = 2.0 * opts.epsilon * target.abs().max(1.0);
    let finish = |plan: ImpulsePlan, dual: &mut DualSolution| {
        let mut plan = sparsify(problem, plan, tol, target, bound);
        dual.active_times = times_of(&plan);
        plan.solve_time = start.elapsed().as_secs_f64();
        Ok(plan)
    };

    let mut last_err = None;
    for eps in extraction_ladder(opts.epsilon) {
        let attempt = extract_on_grid(problem, &grid, dual, eps, true)
            .and_then(|times| solve_discrete_primal_with(problem, &times, tol));
        match attempt {
            Ok(plan) => {
                if (plan.total_cost - target).abs() <= bound {
                    return finish(plan, dual);
                }
                let polished = extract_on_grid(problem, &grid, dual, eps, false)
                    .and_then(|times| solve_discrete_primal_with(problem, &times, tol))
                    .map(|p| reduce_support(problem, p, tol, target, bound));
                let best = match polished {
                    Ok(p) if p.total_cost < plan.total_cost => p,
                    _ => plan,
                };
                return finish(best, dual);
            }
            Err(e @ (Error::Reconstruction(_) | Error::Inconsistent(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let full: Vec<Vec<f64>> = grid.windows().iter().map(|w| w.times.clone()).collect();
    match solve_discrete_primal_with(problem, &full, tol) {
        Ok(plan) => finish(reduce_support(problem, plan, tol, target, bound), dual),
        Err(Error::Reconstruction(msg)) => Err(Error::Reconstruction(format!(
            "{msg} (after active-set attempts failed with: {})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSide {
    /// Ordinary output sample.
    Regular,
    /// State just before an impulse.
    #[serde(rename = "pre")]
    PreImpulse,
    /// State just after an impulse.
    #[serde(rename = "post")]
    PostImpulse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub sides: Vec<SampleSide>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories always hold the final time")
    }
}

/// `count` evenly spaced times over the horizon, endpoints included.
pub fn uniform_output_grid(problem: &TransferProblem, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let (t0, tf) = (problem.t0(), problem.tf());
    (0..count).map(|i| if i + 1 == count { tf } else { t0 + (tf - t0) * i as f64 / (count - 1) as f64 }).collect()
}

/// Piecewise propagation through `Φ` with jumps `B(t_j) v_j`; impulse times
/// appear twice, once on each side of the jump.
pub fn propagate(problem: &TransferProblem, plan: &ImpulsePlan, output_grid: &[f64]) -> Trajectory {
    let sys = problem.system();
    let mut events: Vec<&Impulse> = plan.impulses.iter().flatten().collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut outputs: Vec<f64> = output_grid
        .iter()
        .copied()
        .filter(|t| *t >= problem.t0() && *t <= problem.tf())
        .chain([problem.t0(), problem.tf()])
        .collect();
    outputs.sort_by(f64::total_cmp);
    outputs.dedup();

    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), sides: Vec::new() };
    let mut anchor_t = problem.t0();
    let mut anchor_x = problem.x0().clone();
    let mut next_event = 0;
    let push = |traj: &mut Trajectory, t: f64, x: DVector<f64>, side: SampleSide| {
        traj.times.push(t);
        traj.states.push(x);
        traj.sides.push(side);
    };
    for &t in &outputs {
        while next_event < events.len() && events[next_event].time <= t {
            let imp = events[next_event];
            let before = sys.stm(anchor_t, imp.time) * &anchor_x;
            let after = &before + sys.input_map(imp.time) * DVector::from_column_slice(&imp.vector);
            push(&mut traj, imp.time, before, SampleSide::PreImpulse);
            push(&mut traj, imp.time, after.clone(), SampleSide::PostImpulse);
            anchor_t = imp.time;
            anchor_x = after;
            next_event += 1;
        }
        if traj.times.last() == Some(&t) {
            continue;
        }
        let x = sys.stm(anchor_t, t) * &anchor_x;
        push(&mut traj, t, x, SampleSide::Regular);
    }
    traj
}
