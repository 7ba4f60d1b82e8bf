//! Two-component KL-mixture test function with a sharp and a flat minimum.
//!
//! `L(mu, sigma) = -log(sum_i w_i * exp(-K_i(mu, sigma) / s_i^2))` where `K_i`
//! is the KL divergence between `N(mu, sigma^2)` and component `i`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{LossSurface, Tape, Var};
use crate::error::{invalid, Error, Result};

/// Lower bound applied to sigma along optimization trajectories.
pub const SIGMA_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss2Mixture {
    pub components: [MixtureComponent; 2],
}

impl Default for Gauss2Mixture {
    /// Flat component centred at (20, 30), sharp one at (-20, 10).
    fn default() -> Self {
        Self {
            components: [
                MixtureComponent { mu: 20.0, sigma: 30.0, weight: 0.7, scale: 1.8 },
                MixtureComponent { mu: -20.0, sigma: 10.0, weight: 0.3, scale: 1.2 },
            ],
        }
    }
}

impl Gauss2Mixture {
    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            if !(c.sigma > 0.0 && c.weight > 0.0 && c.scale > 0.0) {
                return Err(invalid("mixture sigma, weight and scale must be positive"));
            }
        }
        Ok(())
    }
}

/// KL divergence `KL(N(mu, sigma^2) || N(mu_i, sigma_i^2))`.
pub fn kl_gauss(mu: f64, sigma: f64, mu_i: f64, sigma_i: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(sigma_i > 0.0) {
        return Err(invalid(format!("standard deviations must be positive (sigma={sigma}, sigma_i={sigma_i})")));
    }
    Ok((sigma_i / sigma).ln() + (sigma * sigma + (mu - mu_i).powi(2)) / (2.0 * sigma_i * sigma_i) - 0.5)
}

/// Direct floating-point evaluation of the mixture loss (no tape).
pub fn mixture_loss(spec: &Gauss2Mixture, mu: f64, sigma: f64) -> Result<f64> {
    let mut arg = 0.0;
    for c in &spec.components {
        arg += c.weight * (-kl_gauss(mu, sigma, c.mu, c.sigma)? / (c.scale * c.scale)).exp();
    }
    if !(arg > 0.0) {
        return Err(Error::NonFinite(format!("mixture log argument {arg} at ({mu}, {sigma})")));
    }
    Ok(-arg.ln())
}

/// The mixture as a differentiable surface over `(mu, sigma)`.
#[derive(Debug, Clone, Default)]
pub struct MixtureSurface {
    pub spec: Gauss2Mixture,
}

impl MixtureSurface {
    pub fn new(spec: Gauss2Mixture) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }
}

impl LossSurface for MixtureSurface {
    fn dim(&self) -> usize {
        2
    }

    fn record(&self, tape: &mut Tape, params: Var) -> Var {
        let mu = tape.slice(params, 0, 1, 1);
        let sigma = tape.slice(params, 1, 1, 1);
        let log_sigma = tape.ln(sigma);
        let sigma_sq = tape.mul(sigma, sigma);
        let mut mix: Option<Var> = None;
        for c in &self.spec.components {
            let d = tape.offset(mu, -c.mu);
            let d_sq = tape.mul(d, d);
            let num = tape.add(sigma_sq, d_sq);
            let quad = tape.scale(num, 1.0 / (2.0 * c.sigma * c.sigma));
            let kl = tape.sub(quad, log_sigma);
            let kl = tape.offset(kl, c.sigma.ln() - 0.5);
            let expo = tape.scale(kl, -1.0 / (c.scale * c.scale));
            let e = tape.exp(expo);
            let term = tape.scale(e, c.weight);
            mix = Some(match mix {
                None => term,
                Some(m) => tape.add(m, term),
            });
        }
        let log_mix = tape.ln(mix.expect("two components"));
        tape.scale(log_mix, -1.0)
    }

    fn clamp_to_domain(&self, point: &mut [f64]) -> bool {
        if point[1] < SIGMA_FLOOR {
            point[1] = SIGMA_FLOOR;
            true
        } else {
            false
        }
    }
}
