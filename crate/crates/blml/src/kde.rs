//! Reference kernel density estimators.
//!
//! Three one-dimensional kernels: the Gaussian, a sixth-order Gaussian
//! whose polynomial factor cancels the second and fourth moments, and the
//! sinc kernel. The higher-order and sinc kernels take negative values, and
//! nothing here clips them: the point of carrying these estimators is to
//! compare raw convergence behaviour.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::sinc::sinc_kernel;

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KdeKind {
    /// Plain Gaussian kernel, second order.
    Gauss2,
    /// Sixth-order Gaussian kernel `(15 - 10u^2 + u^4) phi(u) / 8`.
    Gauss6,
    /// Sinc kernel at a cut-off frequency.
    Sinc,
}

impl KdeKind {
    pub fn name(self) -> &'static str {
        match self {
            KdeKind::Gauss2 => "gauss2",
            KdeKind::Gauss6 => "gauss6",
            KdeKind::Sinc => "sinc",
        }
    }
}

/// Bandwidth schedule tied to a cut-off frequency: `scale / fc` times the
/// sample-count power matching the kernel order, `n^{-1/5}` for the second
/// order kernel and `n^{-1/13}` for the sixth-order one.
pub fn schedule_bandwidth(kind: KdeKind, cutoff: f64, n: usize, scale: f64) -> Result<f64> {
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::InvalidInput(format!("cut-off must be positive, got {cutoff}")));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth scale must be positive, got {scale}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("bandwidth schedule needs samples".into()));
    }
    let exponent = match kind {
        KdeKind::Gauss2 => -1.0 / 5.0,
        KdeKind::Gauss6 => -1.0 / 13.0,
        KdeKind::Sinc => {
            return Err(Error::Config(
                "the sinc kernel takes the cut-off directly, not a bandwidth".into(),
            ))
        }
    };
    Ok(scale / cutoff * (n as f64).powf(exponent))
}

/// A fitted kernel density: samples plus one smoothing parameter, the
/// bandwidth for Gaussian kinds or the cut-off for the sinc kernel.
#[derive(Debug, Clone, Serialize)]
pub struct KdeModel {
    samples: SampleSet,
    kind: KdeKind,
    parameter: f64,
}

pub fn kde_fit(samples: &SampleSet, kind: KdeKind, parameter: f64) -> Result<KdeModel> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty sample set".into()));
    }
    samples.scalars()?;
    if !(parameter.is_finite() && parameter > 0.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing parameter must be positive, got {parameter}"
        )));
    }
    Ok(KdeModel { samples: samples.clone(), kind, parameter })
}

impl KdeModel {
    pub fn kind(&self) -> KdeKind {
        self.kind
    }

    pub fn parameter(&self) -> f64 {
        self.parameter
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn density_at(&self, x: f64) -> f64 {
        let xs = self.samples.as_flat();
        let n = xs.len() as f64;
        match self.kind {
            KdeKind::Gauss2 => {
                let q = self.parameter;
                let mut acc = 0.0;
                for &xi in xs {
                    let u = (x - xi) / q;
                    acc += (-0.5 * u * u).exp();
                }
                acc * INV_SQRT_TAU / (n * q)
            }
            KdeKind::Gauss6 => {
                let q = self.parameter;
                let mut acc = 0.0;
                for &xi in xs {
                    let u = (x - xi) / q;
                    let u2 = u * u;
                    acc += (15.0 - 10.0 * u2 + u2 * u2) * (-0.5 * u2).exp();
                }
                acc * INV_SQRT_TAU / (8.0 * n * q)
            }
            KdeKind::Sinc => {
                let fc = self.parameter;
                let mut acc = 0.0;
                for &xi in xs {
                    acc += sinc_kernel(x - xi, fc);
                }
                acc / n
            }
        }
    }

    /// Sequential batch evaluation.
    pub fn eval_density(&self, queries: &[f64]) -> Vec<f64> {
        queries.iter().map(|&x| self.density_at(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_at_zero() -> SampleSet {
        SampleSet::from_scalars(vec![0.0], "t").unwrap()
    }

    #[test]
    fn gaussian_peak_value() {
        let model = kde_fit(&single_at_zero(), KdeKind::Gauss2, 1.0).unwrap();
        assert_relative_eq!(model.density_at(0.0), INV_SQRT_TAU, max_relative = 1e-15);
    }

    #[test]
    fn sixth_order_peak_value() {
        // (15/8) phi(0) = 0.74801677...
        let model = kde_fit(&single_at_zero(), KdeKind::Gauss6, 1.0).unwrap();
        assert_relative_eq!(
            model.density_at(0.0),
            15.0 / 8.0 * INV_SQRT_TAU,
            max_relative = 1e-15
        );
    }

    #[test]
    fn bandwidth_schedule_values() {
        let q2 = schedule_bandwidth(KdeKind::Gauss2, 0.8, 10_000, 0.4).unwrap();
        assert_relative_eq!(q2, 0.5 * 1e4f64.powf(-0.2), max_relative = 1e-12);
        assert!((q2 - 0.0792).abs() < 5e-5);
        let q6 = schedule_bandwidth(KdeKind::Gauss6, 0.8, 10_000, 0.4).unwrap();
        assert_relative_eq!(q6, 0.5 * 1e4f64.powf(-1.0 / 13.0), max_relative = 1e-12);
        assert!((q6 - 0.2462).abs() < 5e-5);
        assert!(schedule_bandwidth(KdeKind::Sinc, 0.8, 100, 0.4).is_err());
    }

    #[test]
    fn sixth_order_kernel_moments_vanish() {
        // Mass 1, zero second and fourth moments, by wide trapezoid sums.
        let step = 1e-3;
        let half = (12.0 / step) as i64;
        let (mut m0, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for k in -half..=half {
            let u = k as f64 * step;
            let u2 = u * u;
            let v = (15.0 - 10.0 * u2 + u2 * u2) * (-0.5 * u2).exp() * INV_SQRT_TAU / 8.0;
            let w = if k.abs() == half { 0.5 } else { 1.0 };
            m0 += w * v;
            m2 += w * v * u2;
            m4 += w * v * u2 * u2;
        }
        assert_relative_eq!(m0 * step, 1.0, epsilon = 1e-9);
        assert!((m2 * step).abs() < 1e-9);
        assert!((m4 * step).abs() < 1e-8);
    }

    #[test]
    fn sixth_order_goes_negative_without_clipping() {
        let model = kde_fit(&single_at_zero(), KdeKind::Gauss6, 1.0).unwrap();
        // 15 - 10 u^2 + u^4 < 0 at u = 2.
        assert!(model.density_at(2.0) < 0.0);
    }

    #[test]
    fn sinc_kernel_model_value_and_negativity() {
        let model = kde_fit(&single_at_zero(), KdeKind::Sinc, 1.0).unwrap();
        assert_relative_eq!(
            model.density_at(0.5),
            2.0 / std::f64::consts::PI,
            max_relative = 1e-15
        );
        // First negative lobe.
        assert!(model.density_at(1.5) < 0.0);
    }

    #[test]
    fn sinc_kernel_mass_is_one() {
        // Trapezoid spacing below the reciprocal cut-off makes the infinite
        // lattice sum exact for the band-limited kernel, so the only error
        // is the discarded lattice tail. The sampled phase advances 0.4 pi
        // per step (period five), and the residual after per-period
        // cancellation against the 1/d decay shrinks like 1/R: about 2e-6
        // at this radius.
        let fc = 0.8;
        let model = kde_fit(&single_at_zero(), KdeKind::Sinc, fc).unwrap();
        let step = 0.4 / fc;
        let count = 100_000i64;
        let mut acc = 0.0;
        for k in -count..=count {
            let w = if k.abs() == count { 0.5 } else { 1.0 };
            acc += w * model.density_at(k as f64 * step);
        }
        assert!((acc * step - 1.0).abs() < 1e-5, "mass {}", acc * step);
    }

    #[test]
    fn gaussian_mixture_mass_is_one() {
        let samples = SampleSet::from_scalars(vec![-1.0, 0.3, 2.0], "t").unwrap();
        for kind in [KdeKind::Gauss2, KdeKind::Gauss6] {
            let model = kde_fit(&samples, kind, 0.7).unwrap();
            let step = 1e-3;
            let lo = -1.0 - 12.0 * 0.7;
            let hi = 2.0 + 12.0 * 0.7;
            let count = ((hi - lo) / step) as usize;
            let mut acc = 0.0;
            for k in 0..=count {
                let w = if k == 0 || k == count { 0.5 } else { 1.0 };
                acc += w * model.density_at(lo + k as f64 * step);
            }
            assert_relative_eq!(acc * step, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let samples = single_at_zero();
        assert!(kde_fit(&samples, KdeKind::Gauss2, 0.0).is_err());
        assert!(kde_fit(&samples, KdeKind::Gauss2, f64::NAN).is_err());
        let planar = SampleSet::new(vec![0.0, 0.0], 2, "t").unwrap();
        assert!(kde_fit(&planar, KdeKind::Gauss2, 1.0).is_err());
    }
}
