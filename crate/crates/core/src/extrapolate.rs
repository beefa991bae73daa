//! Richardson extrapolation in `1/r` for radius-indexed quantities.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eliminates the `O(1/r)` term from two samples `(r₁, y₁)`, `(r₂, y₂)` of a
/// quantity with expansion `y(r) = L + c/r + o(1/r)`:
/// `L ≈ (r₂ y₂ − r₁ y₁)/(r₂ − r₁)`.
pub fn richardson_pair<F: Scalar>(r1: F, y1: F, r2: F, y2: F) -> Result<F> {
    if r1 <= F::zero() || r2 <= F::zero() || r1 == r2 {
        return Err(Error::Precondition(
            "Richardson extrapolation needs two distinct positive radii".into(),
        ));
    }
    Ok((r2 * y2 - r1 * y1) / (r2 - r1))
}

/// Extrapolated limit from the last two entries of a radius ladder.
pub fn richardson_tail<F: Scalar>(radii: &[F], values: &[F]) -> Result<F> {
    if radii.len() != values.len() || radii.len() < 2 {
        return Err(Error::Precondition(
            "need at least two (radius, value) samples".into(),
        ));
    }
    let n = radii.len();
    richardson_pair(radii[n - 2], values[n - 2], radii[n - 1], values[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn removes_first_order_term() {
        let f = |r: f64| 3.5 + 2.0 / r;
        let v = richardson_pair(64.0, f(64.0), 128.0, f(128.0)).unwrap();
        assert_relative_eq!(v, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn second_order_residual_scales() {
        let f = |r: f64| 1.0 - 0.7 / r + 0.3 / (r * r);
        let coarse = richardson_pair(32.0, f(32.0), 64.0, f(64.0)).unwrap();
        let fine = richardson_pair(64.0, f(64.0), 128.0, f(128.0)).unwrap();
        assert!((fine - 1.0).abs() < (coarse - 1.0).abs() / 3.0);
    }

    #[test]
    fn rejects_bad_radii() {
        assert!(richardson_pair(2.0, 0.0, 2.0, 0.0).is_err());
        assert!(richardson_pair(-1.0, 0.0, 2.0, 0.0).is_err());
        assert!(richardson_tail::<f64>(&[1.0], &[1.0]).is_err());
    }
}
