//! Reverse-mode differentiation over flat parameter vectors.
//!
//! A [`LossSurface`] records its loss graph on a [`Tape`]; [`evaluate`] runs
//! the forward sweep only, [`gradient`] adds the reverse sweep. Both tick a
//! caller-owned [`PassCount`] so optimizers can account for every forward and
//! backward pass they spend.

mod mlp;
mod tape;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use mlp::{Activation, MlpLoss, MlpSpec, MlpSurface, Targets};
pub use tape::{Adjoints, Tape, Var};

use crate::error::{Error, Result};
use crate::param::{GradVector, ParamVector};

/// Largest dimension for which dense Hessians are formed.
pub const MAX_HESSIAN_DIM: usize = 2000;

/// A differentiable scalar objective over a flat parameter vector.
///
/// Implementors are immutable apart from the minibatch selector, which the
/// driver switches only between optimizer iterations.
pub trait LossSurface: Send + Sync {
    fn dim(&self) -> usize;

    /// Records the loss at `params` (a `1 x dim` trainable leaf) and returns the scalar output node.
    fn record(&self, tape: &mut Tape, params: Var) -> Var;

    /// Closed-form Hessian, when the surface has one.
    fn analytic_hessian(&self, _point: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn num_batches(&self) -> usize {
        1
    }

    fn batch(&self) -> usize {
        0
    }

    fn set_batch(&mut self, _batch: usize) {}

    /// Index groups used by filter-wise perturbations. Defaults to one group.
    fn filter_groups(&self) -> Vec<Vec<usize>> {
        vec![(0..self.dim()).collect()]
    }

    /// Projects an iterate back into the surface's domain. Returns true when it moved.
    fn clamp_to_domain(&self, _point: &mut [f64]) -> bool {
        false
    }
}

/// Forward/backward pass tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub forwards: u64,
    pub backwards: u64,
}

impl PassCount {
    pub fn total(&self) -> u64 {
        self.forwards + self.backwards
    }

    pub fn merge(&mut self, other: PassCount) {
        self.forwards += other.forwards;
        self.backwards += other.backwards;
    }
}

fn check_point<S: LossSurface + ?Sized>(surface: &S, point: &[f64]) -> Result<()> {
    if point.len() != surface.dim() {
        return Err(Error::DimensionMismatch { expected: surface.dim(), actual: point.len() });
    }
    Ok(())
}

/// Loss at `point` without counting a pass. Returns NaN/inf as-is.
pub(crate) fn raw_loss<S: LossSurface + ?Sized>(surface: &S, point: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.param(point.to_vec(), 1, point.len());
    let out = surface.record(&mut tape, p);
    tape.scalar(out)
}

pub(crate) fn raw_value_and_gradient<S: LossSurface + ?Sized>(surface: &S, point: &[f64]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let p = tape.param(point.to_vec(), 1, point.len());
    let out = surface.record(&mut tape, p);
    let g = tape.backward(out).wrt(p, point.len());
    (tape.scalar(out), g)
}

/// Loss at `point` on the surface's current batch. Counts one forward pass.
pub fn evaluate<S: LossSurface + ?Sized>(surface: &S, point: &[f64], passes: &mut PassCount) -> Result<f64> {
    check_point(surface, point)?;
    passes.forwards += 1;
    let v = raw_loss(surface, point);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluation ({v})")));
    }
    Ok(v)
}

/// Loss and exact gradient at `point`. Counts one forward and one backward pass.
pub fn value_and_gradient<S: LossSurface + ?Sized>(
    surface: &S,
    point: &[f64],
    passes: &mut PassCount,
) -> Result<(f64, GradVector)> {
    check_point(surface, point)?;
    passes.forwards += 1;
    passes.backwards += 1;
    let (v, g) = raw_value_and_gradient(surface, point);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluation ({v})")));
    }
    let g = GradVector::new(g).map_err(|_| Error::NonFinite("gradient".into()))?;
    Ok((v, g))
}

pub fn gradient<S: LossSurface + ?Sized>(surface: &S, point: &[f64], passes: &mut PassCount) -> Result<GradVector> {
    value_and_gradient(surface, point, passes).map(|(_, g)| g)
}

/// Dense Hessian at `point`.
///
/// Uses the surface's closed form when available, otherwise central
/// differences of the exact gradient with step `1e-4 * (1 + |x_i|)`, then
/// symmetrizes. Diagnostic only; passes are not counted.
pub fn exact_hessian<S: LossSurface + ?Sized>(surface: &S, point: &ParamVector) -> Result<DMatrix<f64>> {
    let n = surface.dim();
    check_point(surface, point)?;
    if n > MAX_HESSIAN_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    if let Some(h) = surface.analytic_hessian(point) {
        return symmetrize_checked(h, 1e-10);
    }
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut x = point.to_vec();
    for j in 0..n {
        let step = 1e-4 * (1.0 + x[j].abs());
        let orig = x[j];
        x[j] = orig + step;
        let (_, gp) = raw_value_and_gradient(surface, &x);
        x[j] = orig - step;
        let (_, gm) = raw_value_and_gradient(surface, &x);
        x[j] = orig;
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("finite-difference Hessian".into()));
    }
    symmetrize_checked(h, 1e-3)
}

/// Relative asymmetry `||H - H^T||_inf / ||H||_inf` (row-sum norms).
pub fn asymmetry(h: &DMatrix<f64>) -> f64 {
    let inf_norm = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let scale = inf_norm(h);
    if scale == 0.0 {
        return 0.0;
    }
    inf_norm(&(h - h.transpose())) / scale
}

fn symmetrize_checked(h: DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let a = asymmetry(&h);
    if a > tol {
        return Err(Error::Asymmetric(a));
    }
    Ok((&h + h.transpose()) * 0.5)
}
