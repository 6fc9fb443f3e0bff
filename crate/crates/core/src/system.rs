//! Linear time-varying plants `x' = A(t) x + B(t) u` and their state
//! transition matrices.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A linear time-varying plant.
///
/// `stm(t_from, t_to)` returns `Φ(t_to, t_from)`, the map taking the state at
/// `t_from` to the state at `t_to`. Implementations must satisfy
/// `stm(t, t) = I` and `stm(t0, t2) = stm(t1, t2) * stm(t0, t1)`.
pub trait LtvSystem: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn plant(&self, t: f64) -> DMatrix<f64>;
    fn input_map(&self, t: f64) -> DMatrix<f64>;
    fn stm(&self, t_from: f64, t_to: f64) -> DMatrix<f64>;
}

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// General plant whose transition matrix is found by integrating
/// `dΦ/dt = A(t) Φ` with fixed-step classical Runge-Kutta.
#[derive(Clone)]
pub struct OdeSystem {
    state_dim: usize,
    input_dim: usize,
    plant: MatrixFn,
    input_map: MatrixFn,
    step: f64,
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("step", &self.step)
            .finish()
    }
}

impl OdeSystem {
    pub fn new(state_dim: usize, input_dim: usize, plant: MatrixFn, input_map: MatrixFn, step: f64) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 {
            return Err(Error::Dimension("state and input dimensions must be positive".into()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidProblem(format!("integration step must be positive, got {step}")));
        }
        let a = plant(0.0);
        let b = input_map(0.0);
        if a.shape() != (state_dim, state_dim) {
            return Err(Error::Dimension(format!("A(t) is {:?}, expected {state_dim}x{state_dim}", a.shape())));
        }
        if b.shape() != (state_dim, input_dim) {
            return Err(Error::Dimension(format!("B(t) is {:?}, expected {state_dim}x{input_dim}", b.shape())));
        }
        Ok(Self { state_dim, input_dim, plant, input_map, step })
    }

    /// Time-invariant plant built from constant matrices.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, step: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::Dimension(format!(
                "A is {:?} and B is {:?}; need square A with matching rows",
                a.shape(),
                b.shape()
            )));
        }
        let (nx, nu) = b.shape();
        Self::new(nx, nu, Arc::new(move |_| a.clone()), Arc::new(move |_| b.clone()), step)
    }
}

impl LtvSystem for OdeSystem {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn plant(&self, t: f64) -> DMatrix<f64> {
        (self.plant)(t)
    }

    fn input_map(&self, t: f64) -> DMatrix<f64> {
        (self.input_map)(t)
    }

    fn stm(&self, t_from: f64, t_to: f64) -> DMatrix<f64> {
        let span = t_to - t_from;
        let mut phi = DMatrix::identity(self.state_dim, self.state_dim);
        if span == 0.0 {
            return phi;
        }
        let steps = (span.abs() / self.step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for i in 0..steps {
            let t = t_from + i as f64 * h;
            let a0 = (self.plant)(t);
            let am = (self.plant)(t + 0.5 * h);
            let a1 = (self.plant)(t + h);
            let k1 = &a0 * &phi;
            let k2 = &am * (&phi + &k1 * (0.5 * h));
            let k3 = &am * (&phi + &k2 * (0.5 * h));
            let k4 = &a1 * (&phi + &k3 * h);
            phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        phi
    }
}

/// How the input gain of each double-integrator axis varies in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputProfile {
    Constant,
    /// Gain `1 + amplitude * sin(frequency * t)`; keep `|amplitude| < 1`.
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
    },
}

/// Stack of independent double integrators, one force input per axis.
/// State ordering is `[p1, v1, p2, v2, ...]`.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    axes: usize,
    profile: InputProfile,
}

impl DoubleIntegrator {
    pub fn new(axes: usize, profile: InputProfile) -> Result<Self> {
        if axes == 0 {
            return Err(Error::Dimension("double integrator needs at least one axis".into()));
        }
        Ok(Self { axes, profile })
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    fn gain(&self, t: f64) -> f64 {
        match self.profile {
            InputProfile::Constant => 1.0,
            InputProfile::Sinusoidal { amplitude, frequency } => 1.0 + amplitude * (frequency * t).sin(),
        }
    }
}

impl LtvSystem for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2 * self.axes
    }

    fn input_dim(&self) -> usize {
        self.axes
    }

    fn plant(&self, _t: f64) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(2 * self.axes, 2 * self.axes);
        for i in 0..self.axes {
            a[(2 * i, 2 * i + 1)] = 1.0;
        }
        a
    }

    fn input_map(&self, t: f64) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(2 * self.axes, self.axes);
        let g = self.gain(t);
        for i in 0..self.axes {
            b[(2 * i + 1, i)] = g;
        }
        b
    }

    fn stm(&self, t_from: f64, t_to: f64) -> DMatrix<f64> {
        let mut phi = DMatrix::identity(2 * self.axes, 2 * self.axes);
        for i in 0..self.axes {
            phi[(2 * i, 2 * i + 1)] = t_to - t_from;
        }
        phi
    }
}
