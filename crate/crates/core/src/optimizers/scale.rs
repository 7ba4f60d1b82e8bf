//! Magnitude attached to the unit descent direction.

use serde::{Deserialize, Serialize};

use super::ascent::AscentTrail;
use crate::autodiff::{evaluate, LossSurface, PassCount};
use crate::error::Result;
use crate::linalg;
use crate::param::ParamVector;

const MIN_SLOPE_DENOM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleStrategy {
    /// `|g_k|`, the SAM-consistent default.
    #[default]
    GK,
    /// `|g_0|`
    G0,
    /// `sum_i |g_i| / (k + 1)`
    Mean,
    /// `max_i |g_i|`
    Max,
    /// `(L(theta_k) - L(theta_0)) / |theta_k - theta_0|`
    SlopeK,
    /// `(L(theta_0 + rho_m v(alpha*)) - L(theta_0)) / rho_m`
    SlopeM,
}

/// Scale for the update direction.
///
/// `probe_loss` is the already-measured `L(theta_0 + rho_m v_alpha)` when the
/// alpha search ran this iteration; `slope_m` otherwise spends one forward pass.
/// Slope strategies fall back to `|g_k|` on vanishing denominators.
#[allow(clippy::too_many_arguments)]
pub fn gradient_scale<S: LossSurface + ?Sized>(
    strategy: ScaleStrategy,
    trail: &AscentTrail,
    surface: &S,
    theta: &ParamVector,
    v_alpha: Option<&[f64]>,
    rho_m: f64,
    probe_loss: Option<f64>,
    passes: &mut PassCount,
) -> Result<f64> {
    let norms = trail.grad_norms();
    let gk = *norms.last().expect("non-empty trail");
    let value = match strategy {
        ScaleStrategy::GK => gk,
        ScaleStrategy::G0 => norms[0],
        ScaleStrategy::Mean => norms.iter().sum::<f64>() / norms.len() as f64,
        ScaleStrategy::Max => norms.iter().cloned().fold(0.0, f64::max),
        ScaleStrategy::SlopeK => {
            let dist = linalg::norm(&linalg::sub(trail.last_point(), trail.origin()));
            if dist < MIN_SLOPE_DENOM {
                gk
            } else {
                (trail.losses.last().unwrap() - trail.losses[0]) / dist
            }
        }
        ScaleStrategy::SlopeM => match v_alpha {
            Some(v) if rho_m >= MIN_SLOPE_DENOM => {
                let probe = match probe_loss {
                    Some(l) => l,
                    None => evaluate(surface, &linalg::add_scaled(theta, rho_m, v), passes)?,
                };
                (probe - trail.losses[0]) / rho_m
            }
            _ => gk,
        },
    };
    // Slopes can come out negative away from a local ascent; the scale stays non-negative.
    Ok(value.max(0.0))
}
