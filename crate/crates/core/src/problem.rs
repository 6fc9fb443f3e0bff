//! Transfer problem data model: windows, boundary conditions and the
//! quantities every solver derives from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::NormKind;
use crate::system::LtvSystem;

/// One control window `T_k = [start, end]` with its cost norm and cap.
///
/// `dv_max = f64::INFINITY` leaves the window unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlWindow {
    pub start: f64,
    pub end: f64,
    pub norm: NormKind,
    pub dv_max: f64,
    pub grid_count: usize,
}

impl ControlWindow {
    pub fn new(start: f64, end: f64, norm: NormKind, dv_max: f64, grid_count: usize) -> Result<Self> {
        let w = Self { start, end, norm, dv_max, grid_count };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.start < self.end) {
            return Err(Error::InvalidProblem(format!(
                "window [{}, {}] must satisfy start < end",
                self.start, self.end
            )));
        }
        if self.dv_max.is_nan() || self.dv_max < 0.0 {
            return Err(Error::InvalidProblem(format!("dv_max must be >= 0, got {}", self.dv_max)));
        }
        if self.grid_count < 2 {
            return Err(Error::InvalidProblem(format!(
                "grid_count must be >= 2 to hold both endpoints, got {}",
                self.grid_count
            )));
        }
        Ok(())
    }

    pub fn is_capped(&self) -> bool {
        self.dv_max.is_finite()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    /// Uniform closed grid, both endpoints included exactly.
    pub fn grid_times(&self) -> Vec<f64> {
        let m = self.grid_count;
        let span = self.end - self.start;
        (0..m).map(|i| if i + 1 == m { self.end } else { self.start + span * i as f64 / (m - 1) as f64 }).collect()
    }
}

/// A magnitude-constrained minimum-fuel transfer.
#[derive(Clone)]
pub struct TransferProblem {
    system: Arc<dyn LtvSystem>,
    t0: f64,
    tf: f64,
    x0: DVector<f64>,
    xf: DVector<f64>,
    windows: Vec<ControlWindow>,
}

impl fmt::Debug for TransferProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransferProblem")
            .field("system", &self.system)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("x0", &self.x0.as_slice())
            .field("xf", &self.xf.as_slice())
            .field("windows", &self.windows.len())
            .finish()
    }
}

impl TransferProblem {
    pub fn new(
        system: Arc<dyn LtvSystem>,
        t0: f64,
        tf: f64,
        x0: DVector<f64>,
        xf: DVector<f64>,
        windows: Vec<ControlWindow>,
    ) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite() && t0 < tf) {
            return Err(Error::InvalidProblem(format!("horizon [{t0}, {tf}] must satisfy t0 < tf")));
        }
        let nx = system.state_dim();
        if x0.len() != nx || xf.len() != nx {
            return Err(Error::Dimension(format!(
                "boundary states have lengths {} and {}, system state dimension is {nx}",
                x0.len(),
                xf.len()
            )));
        }
        if windows.is_empty() {
            return Err(Error::InvalidProblem("at least one control window is required".into()));
        }
        for (k, w) in windows.iter().enumerate() {
            w.validate()?;
            if w.start < t0 || w.end > tf {
                return Err(Error::InvalidProblem(format!("window {k} [{}, {}] leaves the horizon", w.start, w.end)));
            }
            if k > 0 && windows[k - 1].end >= w.start {
                return Err(Error::InvalidProblem(format!("windows {} and {k} overlap or are out of order", k - 1)));
            }
        }
        Ok(Self { system, t0, tf, x0, xf, windows })
    }

    pub fn system(&self) -> &Arc<dyn LtvSystem> {
        &self.system
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn xf(&self) -> &DVector<f64> {
        &self.xf
    }

    pub fn windows(&self) -> &[ControlWindow] {
        &self.windows
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// Same problem with a different window schedule.
    pub fn with_windows(&self, windows: Vec<ControlWindow>) -> Result<Self> {
        Self::new(self.system.clone(), self.t0, self.tf, self.x0.clone(), self.xf.clone(), windows)
    }

    /// Same problem with replacement boundary states.
    pub fn with_boundary(&self, x0: DVector<f64>, xf: DVector<f64>) -> Result<Self> {
        Self::new(self.system.clone(), self.t0, self.tf, x0, xf, self.windows.clone())
    }
}

/// `b = xf - Φ(tf, t0) x0`, the displacement the controls must supply.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector(pub DVector<f64>);

impl DriftVector {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

pub fn drift(problem: &TransferProblem) -> DriftVector {
    let phi = problem.system.stm(problem.t0, problem.tf);
    DriftVector(&problem.xf - phi * &problem.x0)
}

/// `G(t) = Φ(tf, t) B(t)`; `G(t)' λ_f` is the primer vector.
pub fn influence_matrix(problem: &TransferProblem, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= problem.t0 && t <= problem.tf) {
        return Err(Error::Domain { t, t0: problem.t0, tf: problem.tf });
    }
    Ok(influence_unchecked(problem, t))
}

pub(crate) fn influence_unchecked(problem: &TransferProblem, t: f64) -> DMatrix<f64> {
    problem.system.stm(t, problem.tf) * problem.system.input_map(t)
}
