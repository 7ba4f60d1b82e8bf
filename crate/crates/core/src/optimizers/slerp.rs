//! Spherical interpolation between the ascent direction and the final ascent gradient.

use crate::error::{Error, Result};
use crate::linalg;
use crate::param::GradVector;

/// Angles closer than this to 0 or pi make the frame degenerate.
pub const MIN_FRAME_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SlerpFrame {
    v0: GradVector,
    v1: GradVector,
    psi: f64,
    sin_psi: f64,
}

impl SlerpFrame {
    /// Builds a frame from two unit vectors. Fails with [`Error::DegenerateFrame`]
    /// when they are (anti-)parallel.
    pub fn new(v0: GradVector, v1: GradVector) -> Result<Self> {
        if v0.dim() != v1.dim() {
            return Err(Error::DimensionMismatch { expected: v0.dim(), actual: v1.dim() });
        }
        for v in [&v0, &v1] {
            if (v.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("slerp frame needs unit vectors (norm {})", v.norm())));
            }
        }
        let psi = linalg::dot(&v0, &v1).clamp(-1.0, 1.0).acos();
        if !(psi > MIN_FRAME_ANGLE && psi < std::f64::consts::PI - MIN_FRAME_ANGLE) {
            return Err(Error::DegenerateFrame { psi });
        }
        Ok(Self { v0, v1, psi, sin_psi: psi.sin() })
    }

    /// Normalizes both inputs first.
    pub fn from_directions(a: &[f64], b: &[f64]) -> Result<Self> {
        let na = linalg::normalized(a, 1e-300).ok_or(Error::DegenerateFrame { psi: f64::NAN })?;
        let nb = linalg::normalized(b, 1e-300).ok_or(Error::DegenerateFrame { psi: f64::NAN })?;
        Self::new(GradVector::from_raw(na), GradVector::from_raw(nb))
    }

    pub fn v0(&self) -> &GradVector {
        &self.v0
    }

    pub fn v1(&self) -> &GradVector {
        &self.v1
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// `v(alpha) = [sin((1 - alpha) psi) v0 + sin(alpha psi) v1] / sin(psi)`.
    pub fn at(&self, alpha: f64) -> GradVector {
        let c0 = ((1.0 - alpha) * self.psi).sin() / self.sin_psi;
        let c1 = (alpha * self.psi).sin() / self.sin_psi;
        GradVector::from_raw(self.v0.iter().zip(self.v1.iter()).map(|(a, b)| c0 * a + c1 * b).collect())
    }
}

pub fn slerp(frame: &SlerpFrame, alpha: f64) -> GradVector {
    frame.at(alpha)
}
