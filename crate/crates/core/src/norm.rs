//! The three-member norm menu used for impulse costs and their dual norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Impulse cost norm `f`. The dual pairing is fixed: L1 <-> LInf, L2 <-> L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
    LInf,
}

impl NormKind {
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::LInf,
            NormKind::L2 => NormKind::L2,
            NormKind::LInf => NormKind::L1,
        }
    }

    /// Evaluates the norm without the empty-vector check.
    pub(crate) fn eval(self, y: &[f64]) -> f64 {
        match self {
            NormKind::L1 => y.iter().map(|v| v.abs()).sum(),
            NormKind::L2 => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::LInf => y.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub(crate) fn eval_dual(self, y: &[f64]) -> f64 {
        self.dual().eval(y)
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NormKind::L1 => "L1",
            NormKind::L2 => "L2",
            NormKind::LInf => "LInf",
        };
        f.write_str(s)
    }
}

/// `f(y)` for the selected norm.
pub fn norm_value(kind: NormKind, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Dimension("norm of an empty vector".into()));
    }
    Ok(kind.eval(y))
}

/// `f°(y) = sup { x'y : f(x) <= 1 }`.
pub fn dual_norm_value(kind: NormKind, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Dimension("dual norm of an empty vector".into()));
    }
    Ok(kind.eval_dual(y))
}
