#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xsam_core::autodiff::{Activation, MlpLoss, MlpSpec, MlpSurface};
use xsam_core::landscapes::{make_blobs, mixture_loss, Gauss2Mixture};
use xsam_core::{evaluate, gradient, LossSurface, ParamVector, PassCount};

/// Step of the five-point central stencil along a unit direction.
pub const FD_STEP: f64 = 1e-3;
/// Derivatives smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn loss(s: &dyn LossSurface, x: &[f64]) -> f64 {
    evaluate(s, x, &mut PassCount::default()).expect("finite loss")
}

/// Fourth-order central difference of the loss along `d`.
pub fn directional_fd(s: &dyn LossSurface, x: &[f64], d: &[f64]) -> f64 {
    let at = |t: f64| loss(s, &x.iter().zip(d).map(|(a, b)| a + t * b).collect::<Vec<_>>());
    let h = FD_STEP;
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(REL_FLOOR)
}

/// Largest relative error over the given unit directions and coordinate axes.
pub fn grad_check(s: &dyn LossSurface, x: &[f64], dirs: &[Vec<f64>], coords: &[usize]) -> f64 {
    let g = gradient(s, x, &mut PassCount::default()).expect("finite gradient");
    let mut worst: f64 = 0.0;
    for d in dirs {
        let ad: f64 = g.iter().zip(d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(ad, directional_fd(s, x, d)));
    }
    for &i in coords {
        let mut e = vec![0.0; x.len()];
        e[i] = 1.0;
        worst = worst.max(rel_err(g[i], directional_fd(s, x, &e)));
    }
    worst
}

/// Tanh classifier with `[48, 256, 128, 10]` widths (46,730 parameters).
pub fn large_mlp() -> MlpSurface {
    let spec = MlpSpec::new(vec![48, 256, 128, 10], Activation::Tanh, MlpLoss::CrossEntropy).unwrap();
    let data = make_blobs(10, 48, 32, 1.0, 5).unwrap().with_batch_size(16).unwrap();
    MlpSurface::new(spec, &data).unwrap()
}

pub fn small_mlp(loss: MlpLoss) -> MlpSurface {
    let spec = MlpSpec::new(vec![4, 6, 3], Activation::Tanh, loss).unwrap();
    let data = make_blobs(3, 4, 24, 1.0, 2).unwrap().with_batch_size(12).unwrap();
    MlpSurface::new(spec, &data).unwrap()
}

/// Seeded Glorot init plus `0.1 N(0, 1)` on every entry, so biases are nonzero too.
pub fn mlp_point(m: &MlpSurface, seed: u64) -> ParamVector {
    let mut r = rng(seed ^ 0x9e37);
    let p = m.spec().init(seed);
    let noise = gaussian(&mut r, p.dim());
    ParamVector::new(p.iter().zip(noise).map(|(a, b)| a + 0.1 * b).collect()).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub mu: f64,
    pub sigma: f64,
    pub loss: f64,
}

/// Strict local minima of the mixture on a 0.25-spaced grid over the box,
/// each refined by repeatedly re-gridding around the incumbent until the spacing is below 1e-7.
pub fn locate_mixture_minima(spec: &Gauss2Mixture, mu: (f64, f64), sigma: (f64, f64)) -> Vec<Minimum> {
    let step = 0.25;
    let nx = ((mu.1 - mu.0) / step).round() as usize + 1;
    let ny = ((sigma.1 - sigma.0) / step).round() as usize + 1;
    let f = |m: f64, s: f64| mixture_loss(spec, m, s).unwrap();
    let grid: Vec<Vec<f64>> =
        (0..nx).map(|i| (0..ny).map(|j| f(mu.0 + i as f64 * step, sigma.0 + j as f64 * step)).collect()).collect();
    let mut found = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let c = grid[i][j];
            let strict = (-1i32..=1).all(|di| {
                (-1i32..=1)
                    .all(|dj| (di == 0 && dj == 0) || grid[(i as i32 + di) as usize][(j as i32 + dj) as usize] > c)
            });
            if strict {
                found.push((mu.0 + i as f64 * step, sigma.0 + j as f64 * step));
            }
        }
    }
    found
        .into_iter()
        .map(|(mut m, mut s)| {
            let mut h = step;
            while h > 1e-7 {
                let mut best = (f(m, s), m, s);
                for a in -10..=10 {
                    for b in -10..=10 {
                        let (mm, ss) = (m + a as f64 * h / 5.0, s + b as f64 * h / 5.0);
                        let v = f(mm, ss);
                        if v < best.0 {
                            best = (v, mm, ss);
                        }
                    }
                }
                (m, s) = (best.1, best.2);
                h /= 4.0;
            }
            Minimum { mu: m, sigma: s, loss: f(m, s) }
        })
        .collect()
}
