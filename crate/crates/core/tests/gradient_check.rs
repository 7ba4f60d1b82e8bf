//! Tape gradients and Hessians against finite differences of the loss.

mod support;

use rand::Rng;
use support::*;
use xsam_core::autodiff::{Activation, MlpLoss, MlpSpec, MlpSurface, Targets};
use xsam_core::landscapes::{make_quadratic, Gauss2Mixture, MixtureSurface, QuadraticSurface};
use xsam_core::probes::hessian_spectrum;
use xsam_core::{exact_hessian, gradient, LossSurface, ParamVector, PassCount};

const TOL: f64 = 1e-5;

fn all_coords(s: &dyn LossSurface) -> Vec<usize> {
    (0..s.dim()).collect()
}

#[test]
fn mixture_gradient_on_random_points() {
    let s = MixtureSurface::default();
    let mut r = rng(1);
    for _ in 0..100 {
        let x = vec![r.random_range(-40.0..40.0), r.random_range(1.0..60.0)];
        let e = grad_check(&s, &x, &[], &[0, 1]);
        assert!(e <= TOL, "rel err {e} at {x:?}");
    }
}

#[test]
fn quadratic_gradient_on_random_points() {
    let mut r = rng(2);
    for seed in 0..10 {
        let dim = r.random_range(2..=10);
        let s = QuadraticSurface::new(make_quadratic(dim, (0.1, 10.0), seed).unwrap());
        for _ in 0..10 {
            let x = gaussian(&mut r, dim);
            let d = unit(gaussian(&mut r, dim));
            let e = grad_check(&s, &x, &[d], &all_coords(&s));
            assert!(e <= TOL, "rel err {e}");
        }
    }
}

#[test]
fn small_mlp_gradients_every_coordinate() {
    for loss in [MlpLoss::CrossEntropy, MlpLoss::Mse] {
        let m = small_mlp(loss);
        for i in 0..20 {
            let e = grad_check(&m, &mlp_point(&m, i), &[], &all_coords(&m));
            assert!(e <= TOL, "{loss:?}: rel err {e}");
        }
    }
}

#[test]
fn relu_mlp_gradient_away_from_kinks() {
    let spec = MlpSpec::new(vec![4, 6, 3], Activation::Relu, MlpLoss::CrossEntropy).unwrap();
    let data = xsam_core::landscapes::make_blobs(3, 4, 24, 1.0, 2).unwrap().with_batch_size(12).unwrap();
    let m = MlpSurface::new(spec, &data).unwrap();
    let mut r = rng(3);
    for i in 0..10 {
        let x = mlp_point(&m, i);
        let d = unit(gaussian(&mut r, m.dim()));
        let e = grad_check(&m, &x, &[d], &[]);
        assert!(e <= TOL, "rel err {e}");
    }
}

#[test]
fn large_mlp_gradient_directions() {
    let m = large_mlp();
    assert_eq!(m.dim(), 46_730);
    let mut r = rng(4);
    for i in 0..3 {
        let x = mlp_point(&m, i);
        let g = gradient(&m, &x, &mut PassCount::default()).unwrap();
        let dirs = vec![unit(g.into_inner()), unit(gaussian(&mut r, m.dim()))];
        let coords = vec![r.random_range(0..m.dim()), m.dim() - 1];
        let e = grad_check(&m, &x, &dirs, &coords);
        assert!(e <= TOL, "rel err {e}");
    }
}

#[test]
fn gradient_at_flat_corner_matches_differences() {
    let s = MixtureSurface::default();
    let g = gradient(&s, &[20.0, 30.0], &mut PassCount::default()).unwrap();
    for (i, e) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        let fd = directional_fd(&s, &[20.0, 30.0], e);
        assert!((g[i] - fd).abs() <= 1e-9, "component {i}: {} vs {fd}", g[i]);
    }
    assert!(g[0] > 0.0 && g[1] > 0.0);
}

#[test]
fn refined_minima_are_stationary() {
    let s = MixtureSurface::default();
    for m in locate_mixture_minima(&Gauss2Mixture::default(), (-40.0, 40.0), (1.0, 60.0)) {
        let g = gradient(&s, &[m.mu, m.sigma], &mut PassCount::default()).unwrap();
        assert!(g.norm() < 1e-6, "|g| = {} at ({}, {})", g.norm(), m.mu, m.sigma);
    }
}

/// Second differences of the loss itself.
fn fd_hessian(s: &dyn LossSurface, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let at = |i: usize, a: f64, j: usize, b: f64| {
        let mut p = x.to_vec();
        p[i] += a;
        p[j] += b;
        loss(s, &p)
    };
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) / (4.0 * h * h))
                .collect()
        })
        .collect()
}

#[test]
fn zero_mlp_hessian_matches_differences() {
    let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, MlpLoss::Mse).unwrap();
    let mut r = rng(5);
    let features = gaussian(&mut r, 3 * 8);
    let m = MlpSurface::with_targets(spec.clone(), features, Targets::Values(vec![0.0; 16]), 8).unwrap();
    let x = vec![0.0; spec.num_params()];
    let h = exact_hessian(&m, &ParamVector::new(x.clone()).unwrap()).unwrap();
    let fd = fd_hessian(&m, &x, 1e-4);
    for i in 0..x.len() {
        for j in 0..x.len() {
            assert!((h[(i, j)] - fd[i][j]).abs() <= 1e-4, "({i},{j}): {} vs {}", h[(i, j)], fd[i][j]);
        }
    }
}

#[test]
fn mlp_top_eigenvalues_match_differences() {
    let m = small_mlp(MlpLoss::CrossEntropy);
    let x = m.spec().init(0);
    let top = hessian_spectrum(&m, &x, 5).unwrap();
    let fd = fd_hessian(&m, &x, 1e-4);
    let n = x.dim();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (fd[i][j] + fd[j][i]));
    let mut eig: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in top.iter().zip(&eig) {
        assert!((a - b).abs() <= 1e-3 * a.abs().max(1e-3), "{a} vs {b}");
    }
}

#[test]
fn mixture_curvature_ordering() {
    let s = MixtureSurface::default();
    let mins = locate_mixture_minima(&Gauss2Mixture::default(), (-40.0, 40.0), (1.0, 60.0));
    assert_eq!(mins.len(), 2);
    let lam: Vec<Vec<f64>> = mins
        .iter()
        .map(|m| hessian_spectrum(&s, &ParamVector::new(vec![m.mu, m.sigma]).unwrap(), 2).unwrap())
        .collect();
    let (sharp, flat) = if mins[0].mu < mins[1].mu { (&lam[0], &lam[1]) } else { (&lam[1], &lam[0]) };
    assert!(flat.iter().chain(sharp.iter()).all(|&l| l > 0.0));
    assert!(sharp[0] > flat[0]);
}
