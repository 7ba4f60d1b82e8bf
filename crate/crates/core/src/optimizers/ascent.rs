//! Normalized gradient-ascent trail from the current parameters.

use crate::autodiff::{value_and_gradient, LossSurface, PassCount};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::param::{GradVector, ParamVector};

/// Gradient norms below this are treated as stationary.
pub const MIN_GRAD_NORM: f64 = 1e-12;

/// Points `theta_0..theta_k`, their gradients and losses, and the step radii.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrail {
    pub points: Vec<ParamVector>,
    pub grads: Vec<GradVector>,
    pub losses: Vec<f64>,
    pub radii: Vec<f64>,
}

impl AscentTrail {
    /// Number of ascent steps taken.
    pub fn k(&self) -> usize {
        self.radii.len()
    }

    pub fn origin(&self) -> &ParamVector {
        &self.points[0]
    }

    pub fn last_point(&self) -> &ParamVector {
        self.points.last().expect("trail has at least one point")
    }

    pub fn last_grad(&self) -> &GradVector {
        self.grads.last().expect("trail has at least one gradient")
    }

    pub fn total_radius(&self) -> f64 {
        self.radii.iter().sum()
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.grads.iter().map(|g| g.norm()).collect()
    }

    /// Largest deviation between stored points and `theta_i + rho_i g_i / |g_i|`.
    pub fn step_residual(&self) -> f64 {
        (0..self.k())
            .map(|i| {
                let g = &self.grads[i];
                let next = linalg::add_scaled(&self.points[i], self.radii[i] / g.norm(), g);
                linalg::max_abs_diff(&next, &self.points[i + 1])
            })
            .fold(0.0, f64::max)
    }
}

/// Ascent that hit a vanishing gradient part-way: the trail up to (and
/// including) the stationary point.
#[derive(Debug, Clone)]
pub(crate) struct StalledAscent {
    pub trail: AscentTrail,
    pub step: usize,
    pub norm: f64,
}

pub(crate) fn run_ascent<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    k: usize,
    rho: f64,
    passes: &mut PassCount,
) -> Result<std::result::Result<AscentTrail, StalledAscent>> {
    let (loss0, g0) = value_and_gradient(surface, theta, passes)?;
    let mut trail =
        AscentTrail { points: vec![theta.clone()], grads: vec![g0], losses: vec![loss0], radii: Vec::with_capacity(k) };
    for i in 0..k {
        let g = &trail.grads[i];
        let norm = g.norm();
        if norm < MIN_GRAD_NORM {
            return Ok(Err(StalledAscent { trail, step: i, norm }));
        }
        let next = ParamVector::new(linalg::add_scaled(&trail.points[i], rho / norm, g))
            .map_err(|_| Error::NonFinite(format!("ascent point {}", i + 1)))?;
        let (loss, grad) = value_and_gradient(surface, &next, passes)?;
        trail.points.push(next);
        trail.grads.push(grad);
        trail.losses.push(loss);
        trail.radii.push(rho);
    }
    Ok(Ok(trail))
}

/// `k` normalized ascent steps of radius `rho` from `theta`, all on the
/// surface's current batch. Costs `k + 1` forward and backward passes.
pub fn ascend<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    k: usize,
    rho: f64,
    passes: &mut PassCount,
) -> Result<AscentTrail> {
    if k == 0 {
        return Err(invalid("ascend needs k >= 1"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("ascent radius must be positive, got {rho}")));
    }
    match run_ascent(surface, theta, k, rho, passes)? {
        Ok(trail) => Ok(trail),
        Err(stalled) => Err(Error::DegenerateGradient { step: stalled.step, norm: stalled.norm }),
    }
}
