//! Scalar abstraction for the numeric core.
//!
//! Every signal-processing routine in this crate is generic over [`Float`],
//! which is implemented for `f32` and `f64`. Filter *design* always runs in
//! `f64` internally (pole locations near the unit circle do not survive
//! single precision) and casts the resulting coefficients down.

use num_traits::{FromPrimitive, NumAssignOps};

/// Floating-point scalar usable throughout the pipeline.
pub trait Float:
    num_traits::Float
    + FromPrimitive
    + NumAssignOps
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant into `Self`.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    /// Widen to `f64` (exact for `f32`/`f64`).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Mean of a slice; zero for an empty slice.
pub fn mean<F: Float>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    xs.iter().copied().sum::<F>() / F::cast(xs.len() as f64)
}

/// Population variance (ddof = 0) of a slice.
pub fn variance<F: Float>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / F::cast(xs.len() as f64)
}

/// Excess kurtosis of a slice (zero for a Gaussian), computed with
/// population moments.
pub fn excess_kurtosis<F: Float>(xs: &[F]) -> F {
    let m = mean(xs);
    let n = F::cast(xs.len() as f64);
    let m2 = xs.iter().map(|&x| (x - m).powi(2)).sum::<F>() / n;
    let m4 = xs.iter().map(|&x| (x - m).powi(4)).sum::<F>() / n;
    if m2 <= F::zero() {
        return F::zero();
    }
    m4 / (m2 * m2) - F::cast(3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_variance() {
        let xs = [1.0f64, 2.0, 3.0, 4.0];
        assert!((mean(&xs) - 2.5).abs() < 1e-12);
        assert!((variance(&xs) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn kurtosis_of_two_point_mass_is_minus_two() {
        // Symmetric two-point distribution has excess kurtosis exactly -2.
        let xs = [1.0f64, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!((excess_kurtosis(&xs) + 2.0).abs() < 1e-12);
    }
}
