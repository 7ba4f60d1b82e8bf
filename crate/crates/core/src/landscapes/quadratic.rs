//! Positive-definite quadratics `offset + 1/2 (x - c)^T H (x - c)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{LossSurface, Tape, Var};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub h: DMatrix<f64>,
    pub center: Vec<f64>,
    pub offset: f64,
    /// Eigenvalues requested at construction, when built by [`make_quadratic`].
    pub eigenvalues: Option<Vec<f64>>,
}

impl QuadraticSpec {
    /// Checks symmetry and positive definiteness.
    pub fn new(h: DMatrix<f64>, center: Vec<f64>, offset: f64) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n || center.len() != n {
            return Err(invalid("H must be square and match the center"));
        }
        let scale = h.amax().max(f64::MIN_POSITIVE);
        if (&h - h.transpose()).amax() > 1e-12 * scale {
            return Err(invalid("H must be symmetric"));
        }
        let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(invalid(format!("H must be positive definite (min eigenvalue {min_eig})")));
        }
        Ok(Self { h, center, offset, eigenvalues: None })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), vec![0.0; n], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        self.offset + 0.5 * r.dot(&(&self.h * &r))
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        (&self.h * r).iter().cloned().collect()
    }
}

/// Random positive-definite `H = Q diag(lambda) Q^T` with seeded orthogonal `Q`
/// (QR of a Gaussian matrix, sign-fixed) and eigenvalues uniform in `eig_range`.
pub fn make_quadratic(dim: usize, eig_range: (f64, f64), seed: u64) -> Result<QuadraticSpec> {
    let (lo, hi) = eig_range;
    if dim < 2 {
        return Err(invalid("quadratic dimension must be >= 2"));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(invalid(format!("eigenvalue range ({lo}, {hi}) must satisfy 0 < min <= max")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(dim, &mut rng);
    let eigs: Vec<f64> = (0..dim).map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect();
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&eigs));
    let h = &q * lambda * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let mut spec = QuadraticSpec::new(h, vec![0.0; dim], 0.0)?;
    spec.eigenvalues = Some(eigs);
    Ok(spec)
}

pub(crate) fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone)]
pub struct QuadraticSurface {
    pub spec: QuadraticSpec,
}

impl QuadraticSurface {
    pub fn new(spec: QuadraticSpec) -> Self {
        Self { spec }
    }
}

impl LossSurface for QuadraticSurface {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn record(&self, tape: &mut Tape, params: Var) -> Var {
        let n = self.dim();
        let c = tape.constant(self.spec.center.clone(), 1, n);
        // H is symmetric, so row-major storage of H equals H^T.
        let h = tape.constant(self.spec.h.transpose().as_slice().to_vec(), n, n);
        let r = tape.sub(params, c);
        let hr = tape.matmul(r, h);
        let prod = tape.mul(r, hr);
        let q = tape.sum(prod);
        let half = tape.scale(q, 0.5);
        tape.offset(half, self.spec.offset)
    }

    fn analytic_hessian(&self, _point: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.spec.h.clone())
    }

    /// One group per coordinate.
    fn filter_groups(&self) -> Vec<Vec<usize>> {
        (0..self.dim()).map(|i| vec![i]).collect()
    }
}
