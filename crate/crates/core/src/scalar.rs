//! Scalar abstractions shared by the kernels and the cost model.

use std::fmt;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating-point element type accepted by the operator kernels.
///
/// Weights are stored as `f32` on disk and on the wire; kernels running in a
/// wider type widen them on load.
pub trait KernelFloat: Float + FromPrimitive + Send + Sync + fmt::Debug + 'static {
    /// Widens a stored `f32` value.
    fn widen(v: f32) -> Self;
    /// Narrows back to the storage type.
    fn narrow(self) -> f32;
}

impl KernelFloat for f32 {
    #[inline]
    fn widen(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow(self) -> f32 {
        self
    }
}

impl KernelFloat for f64 {
    #[inline]
    fn widen(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn narrow(self) -> f32 {
        self as f32
    }
}

/// Arithmetic used by the analytical cost model.
///
/// Anything that is a field-like number with an ordering and lossless-enough
/// conversions from the `f64` values in a profile qualifies: `f64` for the
/// search, [`crate::ExactRational`] when results must be exact.
pub trait CostScalar:
    Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug + Send + Sync
{
}

impl<T> CostScalar for T where
    T: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug + Send + Sync
{
}

/// Largest of a non-empty sequence under `PartialOrd`.
pub(crate) fn max_of<T: CostScalar>(items: impl IntoIterator<Item = T>) -> Option<T> {
    items.into_iter().fold(None, |acc, x| match acc {
        None => Some(x),
        Some(m) => Some(if x > m { x } else { m }),
    })
}
