//! Relative-orbital-element (ROE) dynamics about a circular reference orbit.
//!
//! The carried state is `a·δœ = [a δa, a δλ, a δe_x, a δe_y, a δi_x, a δi_y]`
//! expressed in state units of `length_scale` km. One unit of solver input is
//! a velocity change of `n · length_scale`, which folds the `1/(n a)` input
//! factor away and leaves the input matrix as the bare trigonometric `B(t)`.
//! `impulse_unit` is the m/s figure reported per unit of input.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::LtvSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoeModel {
    /// Mean motion `n` of the reference orbit, rad/s.
    pub mean_motion: f64,
    /// Mean argument of latitude at `t = 0`, rad.
    pub u0: f64,
    /// Kilometres per state unit.
    pub length_scale: f64,
    /// Reported m/s per unit of solver input.
    pub impulse_unit: f64,
}

impl RoeModel {
    pub fn new(mean_motion: f64, u0: f64, length_scale: f64, impulse_unit: f64) -> Result<Self> {
        let m = Self { mean_motion, u0, length_scale, impulse_unit };
        m.validate()?;
        Ok(m)
    }

    /// Model whose reporting unit is the physical velocity of one input unit,
    /// `n · length_scale` converted to m/s.
    pub fn physical(mean_motion: f64, u0: f64, length_scale: f64) -> Result<Self> {
        Self::new(mean_motion, u0, length_scale, mean_motion * length_scale * 1000.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.mean_motion) || !ok(self.length_scale) || !ok(self.impulse_unit) || !self.u0.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "ROE model needs positive mean motion, length scale and impulse unit, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion
    }

    /// Mean argument of latitude `q = n t + u0`.
    pub fn latitude(&self, t: f64) -> f64 {
        self.mean_motion * t + self.u0
    }

    pub fn plant(&self) -> Matrix6<f64> {
        let mut a = Matrix6::zeros();
        a[(1, 0)] = -1.5 * self.mean_motion;
        a
    }

    pub fn input_matrix(&self, t: f64) -> nalgebra::Matrix6x3<f64> {
        let (s, c) = self.latitude(t).sin_cos();
        #[rustfmt::skip]
        let b = nalgebra::Matrix6x3::new(
            0.0, 2.0, 0.0,
            -2.0, 0.0, 0.0,
            s, 2.0 * c, 0.0,
            -c, 2.0 * s, 0.0,
            0.0, 0.0, c,
            0.0, 0.0, s,
        );
        b
    }

    /// ROE-to-RTN similarity transform `R(t)`.
    pub fn rtn_matrix(&self, t: f64) -> Matrix6<f64> {
        let (s, c) = self.latitude(t).sin_cos();
        let n = self.mean_motion;
        #[rustfmt::skip]
        let r = Matrix6::new(
            1.0, 0.0, -c, -s, 0.0, 0.0,
            0.0, 1.0, 2.0 * s, -2.0 * c, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, s, -c,
            0.0, 0.0, s, -c, 0.0, 0.0,
            -1.5 * n, 0.0, 2.0 * c, 2.0 * s, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, c, s,
        );
        r
    }
}

/// `Φ(t_to, t_from) = I + A (t_to - t_from)`; exact because `A² = 0`.
pub fn roe_stm(model: &RoeModel, t_from: f64, t_to: f64) -> Matrix6<f64> {
    Matrix6::identity() + model.plant() * (t_to - t_from)
}

#[derive(Debug, Clone, Copy)]
pub struct RoeSystem {
    model: RoeModel,
}

impl RoeSystem {
    pub fn model(&self) -> &RoeModel {
        &self.model
    }
}

pub fn roe_system(model: RoeModel) -> RoeSystem {
    RoeSystem { model }
}

fn to_dmatrix<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

impl LtvSystem for RoeSystem {
    fn state_dim(&self) -> usize {
        6
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn plant(&self, _t: f64) -> DMatrix<f64> {
        to_dmatrix(&self.model.plant())
    }

    fn input_map(&self, t: f64) -> DMatrix<f64> {
        to_dmatrix(&self.model.input_matrix(t))
    }

    fn stm(&self, t_from: f64, t_to: f64) -> DMatrix<f64> {
        to_dmatrix(&roe_stm(&self.model, t_from, t_to))
    }
}

/// Relative state in the target's radial / transverse / normal frame.
///
/// Position is in km. The velocity rows follow the transform matrix, so they
/// are in km per radian of mean anomaly except for the `-(3n/2) a δa` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtnState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

impl RtnState {
    pub fn to_vector(&self) -> Vector6<f64> {
        let p = self.position;
        let v = self.velocity;
        Vector6::new(p[0], p[1], p[2], v[0], v[1], v[2])
    }
}

fn roe_vector(roe: &[f64]) -> Result<Vector6<f64>> {
    if roe.len() != 6 {
        return Err(Error::Dimension(format!("ROE state must have 6 entries, got {}", roe.len())));
    }
    Ok(Vector6::from_column_slice(roe))
}

pub fn roe_to_rtn(model: &RoeModel, t: f64, roe: &[f64]) -> Result<RtnState> {
    let x = model.rtn_matrix(t) * roe_vector(roe)? * model.length_scale;
    Ok(RtnState { position: [x[0], x[1], x[2]], velocity: [x[3], x[4], x[5]] })
}

/// Inverse of [`roe_to_rtn`].
pub fn rtn_to_roe(model: &RoeModel, t: f64, rtn: &RtnState) -> Result<DVector<f64>> {
    let r = model.rtn_matrix(t);
    let lu = r.lu();
    let x = lu
        .solve(&(rtn.to_vector() / model.length_scale))
        .ok_or_else(|| Error::Inconsistent(format!("RTN transform singular at t = {t}")))?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Radial-normal separation `sqrt(x² + z²)` in km.
pub fn rn_separation(model: &RoeModel, t: f64, roe: &[f64]) -> Result<f64> {
    let s = roe_to_rtn(model, t, roe)?;
    Ok(s.position[0].hypot(s.position[2]))
}
