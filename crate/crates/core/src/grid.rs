//! Per-window sample grids with the influence matrices `G(t) = Φ(tf, t) B(t)`
//! evaluated once and shared by the dual scan, the reconstruction and the
//! oracle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::problem::{influence_unchecked, TransferProblem};

#[derive(Debug, Clone)]
pub struct WindowGrid {
    pub times: Vec<f64>,
    pub influence: Vec<DMatrix<f64>>,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ProblemGrid {
    windows: Vec<WindowGrid>,
}

impl ProblemGrid {
    pub fn new(problem: &TransferProblem) -> Self {
        let windows = problem
            .windows()
            .iter()
            .map(|w| {
                let times = w.grid_times();
                let influence = times.par_iter().map(|&t| influence_unchecked(problem, t)).collect();
                WindowGrid { times, influence }
            })
            .collect();
        Self { windows }
    }

    pub fn windows(&self) -> &[WindowGrid] {
        &self.windows
    }

    pub fn window(&self, k: usize) -> &WindowGrid {
        &self.windows[k]
    }

    pub fn total_points(&self) -> usize {
        self.windows.iter().map(WindowGrid::len).sum()
    }

    /// Primer vector `G(t)' λ_f` at grid point `i` of window `k`.
    pub fn primer(&self, k: usize, i: usize, lambda: &DVector<f64>) -> DVector<f64> {
        self.windows[k].influence[i].tr_mul(lambda)
    }
}
