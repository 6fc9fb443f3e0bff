#![allow(dead_code)]

use std::sync::Arc;

use impulse_sip::{roe_system, ControlWindow, LtvSystem, NormKind, RoeModel, TransferProblem};
use nalgebra::DVector;

pub const N: f64 = 0.00113;

/// `count` equal segments over `orbits` orbits, each window ending `buffer`
/// seconds before its segment.
#[allow(clippy::too_many_arguments)]
pub fn roe_problem(
    model: RoeModel,
    orbits: f64,
    count: usize,
    buffer: f64,
    norm: NormKind,
    cap: f64,
    grid: usize,
    x0: [f64; 6],
    xf: [f64; 6],
) -> TransferProblem {
    let tf = orbits * model.period();
    let seg = tf / count as f64;
    let windows = (0..count)
        .map(|k| ControlWindow::new(k as f64 * seg, (k + 1) as f64 * seg - buffer, norm, cap, grid).unwrap())
        .collect();
    let sys: Arc<dyn LtvSystem> = Arc::new(roe_system(model));
    TransferProblem::new(sys, 0.0, tf, DVector::from_row_slice(&x0), DVector::from_row_slice(&xf), windows).unwrap()
}

pub fn planar(cap: f64) -> TransferProblem {
    let m = RoeModel::new(N, 0.0, 1.0, 1.13).unwrap();
    let buffer = 0.1 * m.period();
    roe_problem(
        m,
        4.0,
        8,
        buffer,
        NormKind::L2,
        cap,
        1000,
        [10.0, 100.0, 0.0, 10.0, 0.0, 0.0],
        [0.0, 10.0, 0.0, 0.0, 0.0, 0.0],
    )
}

pub fn visors(cap: f64) -> TransferProblem {
    let m = RoeModel::new(N, 0.0, 0.001, 0.001).unwrap();
    roe_problem(
        m,
        10.0,
        500,
        45.0,
        NormKind::L1,
        cap,
        100,
        [0.0, 0.0, 0.0, 200.0, 0.0, 200.0],
        [-2.62, 45.21, -34.51, 4.78, -18.72, 2.72],
    )
}

/// Impulses grouped into runs of adjacent grid nodes.
pub fn cluster_count(problem: &TransferProblem, plan: &impulse_sip::ImpulsePlan) -> usize {
    let mut count = 0;
    for (w, list) in problem.windows().iter().zip(&plan.impulses) {
        let grid = w.grid_times();
        let mut prev: Option<usize> = None;
        for imp in list {
            let idx = grid.iter().position(|t| *t == imp.time).expect("impulses sit on grid nodes");
            if prev.is_none_or(|p| idx > p + 1) {
                count += 1;
            }
            prev = Some(idx);
        }
    }
    count
}
