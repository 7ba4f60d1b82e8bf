//! Flat parameter and gradient vectors.

use std::ops::Deref;

use crate::error::{Error, Result};

macro_rules! flat_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            /// Validates `dim >= 1` and that every entry is finite.
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.is_empty() {
                    return Err(Error::InvalidArgument(concat!(stringify!($name), " must have dim >= 1").into()));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{} entry {}", stringify!($name), i)));
                }
                Ok(Self(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim.max(1)])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn norm(&self) -> f64 {
                crate::linalg::norm(&self.0)
            }

            // Unchecked: used internally where finiteness was already established
            // or is reported separately by the caller.
            pub(crate) fn from_raw(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = Error;
            fn try_from(v: Vec<f64>) -> Result<Self> {
                Self::new(v)
            }
        }
    };
}

flat_vector!(
    /// Model parameters, or a perturbed point in parameter space.
    ParamVector
);

flat_vector!(
    /// A gradient (or a unit direction) living in the same space as a [`ParamVector`].
    GradVector
);

impl ParamVector {
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, actual: self.dim() });
        }
        Ok(())
    }
}
