//! Search for the interpolation factor whose direction maximizes the loss at radius `rho_m`.

use rayon::prelude::*;

use super::slerp::SlerpFrame;
use crate::autodiff::{raw_loss, LossSurface, PassCount};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::param::ParamVector;

/// Probe grid and the losses measured on it. Non-finite probes are kept as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSearch {
    pub alpha_star: f64,
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
}

impl AlphaSearch {
    /// Loss at `alpha_star`.
    pub fn best_loss(&self) -> f64 {
        let i = self.alphas.iter().position(|&a| a == self.alpha_star).expect("alpha_star on grid");
        self.losses[i]
    }
}

/// `n` uniformly spaced points on `[0, a]`, endpoints included.
pub fn alpha_grid(a: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { a } else { a * i as f64 / last }).collect()
}

/// Losses `L(theta + rho_m v(alpha))` over `alphas`. Costs one forward per entry.
pub fn probe_losses<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    frame: &SlerpFrame,
    rho_m: f64,
    alphas: &[f64],
    passes: &mut PassCount,
) -> Vec<f64> {
    passes.forwards += alphas.len() as u64;
    alphas
        .par_iter()
        .map(|&a| {
            let v = frame.at(a);
            let p = linalg::add_scaled(theta, rho_m, &v);
            let l = raw_loss(surface, &p);
            if l.is_finite() {
                l
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Index of the largest finite entry; ties go to the lowest index.
pub(crate) fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Grid argmax of `L(theta + rho_m v(alpha))` over `n` points of `[0, a]`.
pub fn search_alpha<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    frame: &SlerpFrame,
    rho_m: f64,
    a: f64,
    n: usize,
    passes: &mut PassCount,
) -> Result<AlphaSearch> {
    if n < 2 {
        return Err(invalid("alpha search needs at least 2 samples"));
    }
    if !(rho_m > 0.0) || !a.is_finite() {
        return Err(invalid(format!("invalid alpha search radius/range (rho_m={rho_m}, a={a})")));
    }
    let alphas = alpha_grid(a, n);
    let losses = probe_losses(surface, theta, frame, rho_m, &alphas, passes);
    let best = first_argmax(&losses).ok_or(Error::ProbeFailure(n))?;
    Ok(AlphaSearch { alpha_star: alphas[best], alphas, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::{QuadraticSpec, QuadraticSurface};

    #[test]
    fn grid_endpoints() {
        let g = alpha_grid(2.0, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 2.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn argmax_tie_break_and_nan() {
        assert_eq!(first_argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(first_argmax(&[f64::NAN, 2.0, f64::NAN]), Some(1));
        assert_eq!(first_argmax(&[f64::NAN, f64::NAN]), None);
    }

    #[test]
    fn isotropic_quadratic_is_flat() {
        let s = QuadraticSurface::new(QuadraticSpec::diagonal(&[1.0, 1.0, 1.0]).unwrap());
        let theta = ParamVector::zeros(3);
        let frame = SlerpFrame::from_directions(&[1.0, 0.2, 0.0], &[0.0, 1.0, 0.5]).unwrap();
        let mut passes = PassCount::default();
        let r = search_alpha(&s, &theta, &frame, 0.7, 2.0, 21, &mut passes).unwrap();
        let (lo, hi) = r.losses.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi - lo <= 1e-12);
        assert_eq!(passes.forwards, 21);
        // Exact ties resolve to the smallest alpha; rounding may leave a few ulps of spread.
        assert!(r.losses[0] >= hi - 1e-12);
    }

    #[test]
    fn probe_failure_when_everything_is_undefined() {
        use crate::landscapes::MixtureSurface;
        let s = MixtureSurface::default();
        // Every probe lands at sigma < 0.
        let theta = ParamVector::new(vec![0.0, 1.0]).unwrap();
        let frame = SlerpFrame::from_directions(&[0.01, -1.0], &[-0.01, -1.0]).unwrap();
        let err = search_alpha(&s, &theta, &frame, 50.0, 1.0, 5, &mut PassCount::default()).unwrap_err();
        assert_eq!(err, Error::ProbeFailure(5));
    }
}
