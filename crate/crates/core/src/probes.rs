//! Loss-landscape diagnostics: plane grids, directional gaps, alpha curves,
//! Hessian spectra and average sharpness.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate, exact_hessian, raw_loss, LossSurface, PassCount};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::optimizers::{alpha_grid, first_argmax, probe_losses, SlerpFrame, MIN_FRAME_ANGLE, MIN_GRAD_NORM};
use crate::param::{GradVector, ParamVector};

/// Orthonormal plane through `origin`: `e_y` along `g0`, `e_x` along the part of `g1` orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBasis {
    pub origin: ParamVector,
    pub e_x: GradVector,
    pub e_y: GradVector,
}

impl PlaneBasis {
    pub fn point(&self, x: f64, y: f64) -> Vec<f64> {
        self.origin.iter().zip(self.e_x.iter().zip(self.e_y.iter())).map(|(o, (a, b))| o + x * a + y * b).collect()
    }

    /// Plane coordinates of `p` and its distance from the plane.
    pub fn project(&self, p: &[f64]) -> (f64, f64, f64) {
        let r = linalg::sub(p, &self.origin);
        let x = linalg::dot(&r, &self.e_x);
        let y = linalg::dot(&r, &self.e_y);
        let off = linalg::sub(&r, &linalg::add_scaled(&linalg::scale(&self.e_x, x), y, &self.e_y));
        (x, y, linalg::norm(&off))
    }
}

pub fn plane_basis(theta: &ParamVector, g0: &[f64], g1: &[f64]) -> Result<PlaneBasis> {
    theta.check_dim(g0.len())?;
    theta.check_dim(g1.len())?;
    let e_y =
        linalg::normalized(g0, MIN_GRAD_NORM).ok_or(Error::DegenerateGradient { step: 0, norm: linalg::norm(g0) })?;
    let along = linalg::dot(g1, &e_y);
    let perp = linalg::add_scaled(g1, -along, &e_y);
    let n1 = linalg::norm(g1);
    let angle = (linalg::norm(&perp) / n1.max(f64::MIN_POSITIVE)).min(1.0).asin();
    if !(angle > MIN_FRAME_ANGLE) {
        return Err(Error::DegenerateFrame { psi: angle });
    }
    let e_x = linalg::normalized(&perp, 0.0).ok_or(Error::DegenerateFrame { psi: angle })?;
    Ok(PlaneBasis { origin: theta.clone(), e_x: GradVector::from_raw(e_x), e_y: GradVector::from_raw(e_y) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub basis: PlaneBasis,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: (usize, usize),
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `losses[i * ny + j] = L(origin + xs[i] e_x + ys[j] e_y)`; NaN where evaluation failed.
    pub losses: Vec<f64>,
    /// Cells `(i, j)` whose loss was not finite.
    pub flagged: Vec<(usize, usize)>,
}

impl SurfaceGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.resolution.1 + j]
    }

    /// `(x, y, loss)` rows, x-major.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let ny = self.resolution.1;
        self.losses.iter().enumerate().map(move |(c, &l)| (self.xs[c / ny], self.ys[c % ny], l))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / last }).collect()
}

/// Losses over a `resolution.0 x resolution.1` grid in the plane. One forward per cell.
pub fn surface_grid<S: LossSurface + ?Sized>(
    surface: &S,
    basis: &PlaneBasis,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: (usize, usize),
    passes: &mut PassCount,
) -> Result<SurfaceGrid> {
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(invalid(format!("grid resolution must be at least 2x2, got {nx}x{ny}")));
    }
    basis.origin.check_dim(surface.dim())?;
    let xs = linspace(x_range.0, x_range.1, nx);
    let ys = linspace(y_range.0, y_range.1, ny);
    let losses: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let l = raw_loss(surface, &basis.point(xs[c / ny], ys[c % ny]));
            if l.is_finite() {
                l
            } else {
                f64::NAN
            }
        })
        .collect();
    passes.forwards += (nx * ny) as u64;
    let flagged = losses.iter().enumerate().filter(|(_, l)| l.is_nan()).map(|(c, _)| (c / ny, c % ny)).collect();
    Ok(SurfaceGrid { basis: basis.clone(), x_range, y_range, resolution, xs, ys, losses, flagged })
}

/// `L(theta + r g1/|g1|) - L(theta + r g0/|g0|)` for each radius `r`.
pub fn directional_loss_gap<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    g0: &[f64],
    g1: &[f64],
    rho_ms: &[f64],
    passes: &mut PassCount,
) -> Result<Vec<(f64, f64)>> {
    let u0 =
        linalg::normalized(g0, MIN_GRAD_NORM).ok_or(Error::DegenerateGradient { step: 0, norm: linalg::norm(g0) })?;
    let u1 =
        linalg::normalized(g1, MIN_GRAD_NORM).ok_or(Error::DegenerateGradient { step: 1, norm: linalg::norm(g1) })?;
    rho_ms
        .iter()
        .map(|&r| {
            let l1 = evaluate(surface, &linalg::add_scaled(theta, r, &u1), passes)?;
            let l0 = evaluate(surface, &linalg::add_scaled(theta, r, &u0), passes)?;
            Ok((r, l1 - l0))
        })
        .collect()
}

/// The alpha probe curve `L(theta + rho_m v(alpha))` over `n` points of `[0, a]`.
///
/// With `normalize`, finite losses are min-max scaled to `[0, 1]` (a flat curve maps to zeros).
#[allow(clippy::too_many_arguments)]
pub fn alpha_landscape<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    frame: &SlerpFrame,
    rho_m: f64,
    a: f64,
    n: usize,
    normalize: bool,
    passes: &mut PassCount,
) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(invalid("alpha landscape needs at least 2 samples"));
    }
    let alphas = alpha_grid(a, n);
    let mut losses = probe_losses(surface, theta, frame, rho_m, &alphas, passes);
    if first_argmax(&losses).is_none() {
        return Err(Error::ProbeFailure(n));
    }
    if normalize {
        let finite = losses.iter().copied().filter(|l| l.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l), hi.max(l)));
        let span = hi - lo;
        for l in &mut losses {
            *l = if span > 0.0 { (*l - lo) / span } else { *l - lo };
        }
    }
    Ok(alphas.into_iter().zip(losses).collect())
}

/// Largest `top_k` Hessian eigenvalues, descending.
pub fn hessian_spectrum<S: LossSurface + ?Sized>(surface: &S, theta: &ParamVector, top_k: usize) -> Result<Vec<f64>> {
    let h = exact_hessian(surface, theta)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.truncate(top_k);
    Ok(eig)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpnessMode {
    /// The whole direction is scaled to unit norm.
    ElementWise,
    /// Each filter group is scaled to the norm of the matching parameters
    /// (unit when all of them are zero), then the whole direction to unit norm.
    FilterWise,
}

impl SharpnessMode {
    pub fn name(self) -> &'static str {
        match self {
            SharpnessMode::ElementWise => "element_wise",
            SharpnessMode::FilterWise => "filter_wise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub lambda1: Option<f64>,
    /// Absent when the surface has fewer than five parameters.
    pub lambda1_over_lambda5: Option<f64>,
    /// `(radius, mean loss increase)` pairs.
    pub avg_sharpness_curve: Vec<(f64, f64)>,
    pub n_directions: usize,
    pub mode: SharpnessMode,
}

fn random_direction(dim: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn shape_direction(mut d: Vec<f64>, theta: &[f64], mode: SharpnessMode, groups: &[Vec<usize>]) -> Option<Vec<f64>> {
    if mode == SharpnessMode::FilterWise {
        let weights: Vec<f64> =
            groups.iter().map(|g| g.iter().map(|&i| theta[i] * theta[i]).sum::<f64>().sqrt()).collect();
        let any = weights.iter().any(|&w| w > 0.0);
        for (g, &w) in groups.iter().zip(&weights) {
            let n = g.iter().map(|&i| d[i] * d[i]).sum::<f64>().sqrt();
            let target = if any { w } else { 1.0 };
            let s = if n > 0.0 { target / n } else { 0.0 };
            for &i in g {
                d[i] *= s;
            }
        }
    }
    linalg::normalized(&d, 0.0)
}

/// Mean of `L(theta + r d) - L(theta)` over `n_directions` seeded random unit directions.
///
/// Radii must be non-negative and strictly increasing. Passes are not counted.
pub fn average_sharpness<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    radii: &[f64],
    n_directions: usize,
    mode: SharpnessMode,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if n_directions == 0 {
        return Err(invalid("average sharpness needs at least one direction"));
    }
    if radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("radii must be finite, non-negative and strictly increasing"));
    }
    theta.check_dim(surface.dim())?;
    let base = raw_loss(surface, theta);
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the sharpness centre".into()));
    }
    let groups = surface.filter_groups();
    let rows: Vec<Vec<f64>> = (0..n_directions)
        .into_par_iter()
        .map(|j| {
            let d = shape_direction(random_direction(theta.dim(), seed, j), theta, mode, &groups)
                .unwrap_or_else(|| vec![0.0; theta.dim()]);
            radii.iter().map(|&r| raw_loss(surface, &linalg::add_scaled(theta, r, &d)) - base).collect()
        })
        .collect();
    let mut curve = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        let mut sum = 0.0;
        for row in &rows {
            sum += row[k];
        }
        let mean = sum / n_directions as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("average sharpness at radius {r}")));
        }
        curve.push((r, mean));
    }
    Ok(curve)
}

/// Average-sharpness curve plus, when `spectrum` is set, `lambda1` and `lambda1 / lambda5`.
pub fn sharpness_report<S: LossSurface + ?Sized>(
    surface: &S,
    theta: &ParamVector,
    radii: &[f64],
    n_directions: usize,
    mode: SharpnessMode,
    seed: u64,
    spectrum: bool,
) -> Result<SharpnessReport> {
    let curve = average_sharpness(surface, theta, radii, n_directions, mode, seed)?;
    let (lambda1, ratio) = if spectrum {
        let eig = hessian_spectrum(surface, theta, 5)?;
        (eig.first().copied(), if eig.len() == 5 { Some(eig[0] / eig[4]) } else { None })
    } else {
        (None, None)
    };
    Ok(SharpnessReport { lambda1, lambda1_over_lambda5: ratio, avg_sharpness_curve: curve, n_directions, mode })
}
