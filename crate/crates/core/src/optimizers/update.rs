use crate::error::{Error, Result};
use crate::param::ParamVector;

/// Heavy-ball step carrying the produced descent vector:
/// `buf <- momentum * buf + (direction * scale + weight_decay * theta)`,
/// `theta <- theta - lr * buf`.
pub fn apply_update(
    theta: &ParamVector,
    direction: &[f64],
    scale: f64,
    lr: f64,
    momentum_buf: &mut [f64],
    momentum: f64,
    weight_decay: f64,
) -> Result<ParamVector> {
    let n = theta.dim();
    if direction.len() != n || momentum_buf.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: direction.len().max(momentum_buf.len()) });
    }
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        momentum_buf[i] = momentum * momentum_buf[i] + (direction[i] * scale + weight_decay * theta[i]);
        next.push(theta[i] - lr * momentum_buf[i]);
    }
    ParamVector::new(next).map_err(|_| {
        Error::NonFinite(format!(
            "parameter update (lr={lr}, scale={scale}, |theta|={}, |buf|={})",
            theta.norm(),
            crate::linalg::norm(momentum_buf)
        ))
    })
}
