//! Band-limited interpolation kernel.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Scaled argument below which the kernel switches to its Taylor form.
const TAYLOR_THRESHOLD: f64 = 1e-8;

/// Interpolation kernel of the band limit: `sin(pi fc d) / (pi d)`.
///
/// The removable singularity at `d = 0` is filled with the limit `fc`; for
/// `|pi fc d| < 1e-8` the quadratic Taylor form `fc (1 - (pi fc d)^2 / 6)` is
/// used so the value stays continuous to well below f64 precision.
pub fn sinc_kernel(displacement: f64, cutoff: f64) -> f64 {
    let t = PI * cutoff * displacement;
    if t.abs() < TAYLOR_THRESHOLD {
        cutoff * (1.0 - t * t / 6.0)
    } else {
        t.sin() / (PI * displacement)
    }
}

/// Product kernel over a displacement vector, one factor per dimension.
pub fn sinc_kernel_nd(displacement: &[f64], cutoff: &CutoffFrequency) -> f64 {
    debug_assert_eq!(displacement.len(), cutoff.dim());
    displacement
        .iter()
        .zip(cutoff.per_dim())
        .map(|(&d, &fc)| sinc_kernel(d, fc))
        .product()
}

/// Assumed band limit: one positive cut-off frequency per dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffFrequency(Vec<f64>);

impl CutoffFrequency {
    pub fn new(per_dim: Vec<f64>) -> Result<Self> {
        if per_dim.is_empty() {
            return Err(Error::InvalidInput("cut-off needs at least one dimension".into()));
        }
        if let Some(bad) = per_dim.iter().find(|f| !f.is_finite() || **f <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "cut-off frequencies must be positive and finite, got {bad}"
            )));
        }
        Ok(Self(per_dim))
    }

    pub fn scalar(fc: f64) -> Result<Self> {
        Self::new(vec![fc])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn per_dim(&self) -> &[f64] {
        &self.0
    }

    /// Kernel value at zero displacement: the product of the per-dimension
    /// cut-offs. This is also the sup bound any fitted density must respect.
    pub fn product(&self) -> f64 {
        self.0.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn zero_displacement_is_exactly_the_cutoff() {
        assert_eq!(sinc_kernel(0.0, 0.8), 0.8);
        assert_eq!(sinc_kernel(0.0, 2.5), 2.5);
    }

    #[test]
    fn vanishes_at_integer_multiples_of_the_band_period() {
        // d = k / fc are the kernel zeros.
        for k in [1i32, -1, 2, -2, 5, 17] {
            let d = f64::from(k) / 0.8;
            assert_abs_diff_eq!(sinc_kernel(d, 0.8), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn matches_half_period_closed_form() {
        // sin(pi/2) / (pi/2) = 2/pi at fc = 1, d = 1/2.
        assert_relative_eq!(sinc_kernel(0.5, 1.0), 2.0 / PI, max_relative = 1e-15);
    }

    #[test]
    fn is_even_in_displacement() {
        for d in [1e-9, 1e-3, 0.3, 1.7, 12.34] {
            assert_eq!(sinc_kernel(d, 0.7), sinc_kernel(-d, 0.7));
        }
    }

    #[test]
    fn bounded_by_value_at_zero() {
        let fc = 1.3;
        let mut d = -40.0;
        while d < 40.0 {
            assert!(sinc_kernel(d, fc).abs() <= fc);
            d += 0.0137;
        }
    }

    #[test]
    fn taylor_branch_is_continuous() {
        // Either side of the branch point agrees to near machine precision.
        let fc = 0.8;
        let d_at = TAYLOR_THRESHOLD / (PI * fc);
        let below = sinc_kernel(d_at * 0.999_999, fc);
        let above = sinc_kernel(d_at * 1.000_001, fc);
        assert_relative_eq!(below, above, max_relative = 1e-12);
        // Taylor remainder bound |s(d) - fc| <= fc (pi fc d)^2 / 6, plus a
        // few ulps for the rounding of the direct branch.
        for eps in [1e-12, 1e-10, 1e-9, 1e-7, 1e-6] {
            let t = PI * fc * eps;
            let slack = 16.0 * f64::EPSILON * fc;
            assert!((sinc_kernel(eps, fc) - fc).abs() <= fc * t * t / 6.0 + slack);
        }
    }

    #[test]
    fn product_kernel_peaks_at_the_cutoff_product() {
        let fc = CutoffFrequency::new(vec![0.8, 0.6]).unwrap();
        assert_eq!(sinc_kernel_nd(&[0.0, 0.0], &fc), 0.48);
        // A zero in any single dimension kills the product.
        assert_abs_diff_eq!(sinc_kernel_nd(&[1.0 / 0.8, 0.3], &fc), 0.0, epsilon = 1e-15);
        // Factorization against the 1-D kernel.
        let v = sinc_kernel_nd(&[0.21, -0.47], &fc);
        assert_relative_eq!(
            v,
            sinc_kernel(0.21, 0.8) * sinc_kernel(-0.47, 0.6),
            max_relative = 1e-15
        );
    }

    #[test]
    fn cutoff_validation() {
        assert!(CutoffFrequency::scalar(0.0).is_err());
        assert!(CutoffFrequency::scalar(-1.0).is_err());
        assert!(CutoffFrequency::new(vec![]).is_err());
        assert!(CutoffFrequency::new(vec![0.5, f64::NAN]).is_err());
        assert_eq!(CutoffFrequency::new(vec![0.5, 2.0]).unwrap().product(), 1.0);
    }
}
